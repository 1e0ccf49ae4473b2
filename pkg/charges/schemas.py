import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from linalg.operator import Operator
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
LEFT_ALIGNED = "left_aligned"
NO_GAUGE = "none"
GAUGES = (LEFT_ALIGNED, NO_GAUGE)

H_TILDE = "h_tilde"
H_TILDE_TILDE = "h_tilde_tilde"


class InfeasibleSystemError(RuntimeError):
    """A correction or gauge system has no solution for the given density."""


@dataclass
class ChargeDensity:
    """Local density on qubit sites; the charge is its sum over shifts by shift_period."""
    op: Operator
    shift_period: int = 2
    gauge: str = LEFT_ALIGNED

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ValueError(f"Unknown gauge {self.gauge!r}")
        if self.shift_period < 1:
            raise ValueError(f"Shift period must be positive, got {self.shift_period}")

    @property
    def range(self) -> int:
        return self.op.sites

    def is_diagonal(self) -> bool:
        return self.op.is_diagonal()

    def to_json(self) -> Dict:
        return {
            "range": self.range,
            "shift_period": self.shift_period,
            "gauge": self.gauge,
            "layout": list(self.op.layout),
            "domain": self.op.domain,
            "nnz": self.op.nnz,
            "diagonal": self.is_diagonal(),
        }


@dataclass
class GluedDensity:
    """Density on glued sites: C^4 after one gluing, C^16 after two."""
    op: Operator
    times: int = 1

    @property
    def local_dim(self) -> int:
        return self.op.layout[0]

    @property
    def range(self) -> int:
        return self.op.sites


@dataclass
class CorrectionField:
    kind: str
    density: GluedDensity

    @property
    def op(self) -> Operator:
        return self.density.op


@dataclass
class ChargeTower:
    """Glued generator h and its correction fields at one pinned deformation."""
    weights: FaceWeights
    h: GluedDensity
    h_tilde: Optional[CorrectionField] = None
    h_tilde_tilde: Optional[CorrectionField] = None
    generator: Optional[ChargeDensity] = None
    checks: Dict[str, bool] = field(default_factory=dict)

    def missing(self) -> List[str]:
        return [name for name, v in ((H_TILDE, self.h_tilde), (H_TILDE_TILDE, self.h_tilde_tilde)) if v is None]

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np

from linalg.scalars import format_rational

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
LINEAR = "linear"
QUADRATIC = "quadratic"
EXPONENTIAL = "exponential"
GROWTH_LAWS = (LINEAR, QUADRATIC, EXPONENTIAL)

POISSON = "poisson"
GINUE = "ginue"
# mean |r| and mean cos(arg r) of uncorrelated points and of complex Ginibre spectra
REFERENCE_SUMMARIES = {
    POISSON: (2.0 / 3.0, 0.0),
    GINUE: (0.74, -0.24),
}


@dataclass
class DigitComplexityRecord:
    N: int
    value: Fraction
    digits: int
    seconds: float = 0.0

    @property
    def numerator_digits(self) -> int:
        return len(str(abs(Fraction(self.value).numerator)))

    def to_json(self) -> Dict:
        return {"N": self.N, "digits": self.digits, "value_num_digits": self.numerator_digits,
                "value": format_rational(self.value)}


@dataclass
class GrowthFit:
    """Best law among a*N + b, a*N^2 + b and a*exp(b*N); rss per law in digit units."""
    law: str
    params: Dict[str, List[float]] = field(default_factory=dict)
    rss: Dict[str, float] = field(default_factory=dict)
    sizes: List[int] = field(default_factory=list)

    @property
    def slope(self) -> float:
        return self.params[self.law][0]

    def to_json(self) -> Dict:
        return {"law": self.law, "params": self.params, "rss": self.rss, "sizes": self.sizes}


@dataclass
class SpacingRatioSet:
    ratios: np.ndarray
    mean_abs: float
    mean_cos: float
    std_abs: float = 0.0
    label: Optional[str] = None

    def nearest_reference(self) -> str:
        def gap(kind: str) -> float:
            r, c = REFERENCE_SUMMARIES[kind]
            return (self.mean_abs - r) ** 2 + (self.mean_cos - c) ** 2
        return min(REFERENCE_SUMMARIES, key=gap)

    def to_json(self) -> Dict:
        return {
            "label": self.label,
            "count": int(self.ratios.size),
            "mean_abs": self.mean_abs,
            "std_abs": self.std_abs,
            "mean_cos": self.mean_cos,
            "nearest_reference": self.nearest_reference(),
        }

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
from sympy import Poly
from sympy.ntheory.residue_ntheory import sqrt_mod

from linalg.modular import to_residue
from linalg.operator import Operator, is_face_diagonal
from linalg.scalars import REAL
from linalg.series import U, AlgebraicEntry, PowerSeries, RationalFunction, poly_series, poly_value
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
LAX_LAYOUT = (4, 4, 4)
LAX_DIM = 64

POLYNOMIAL = "polynomial"
PADE = "pade"
RATIO = "ratio"
TRANSFER = "transfer"
ALGEBRAIC = "algebraic"
SERIES = "series"
TAGS = (POLYNOMIAL, PADE, RATIO, TRANSFER, ALGEBRAIC, SERIES)

R_MATRIX = "R_matrix"
A_OPERATOR = "A_operator"
KINDS = (R_MATRIX, A_OPERATOR)

Key = Tuple[int, int]


class IntertwinerError(RuntimeError):
    """No (invertible) intertwiner at the requested spectral points."""

    def __init__(self, message: str, certificate: Optional[Dict] = None):
        super().__init__(message)
        self.certificate = certificate or {}


# ============================================================
# SERIES FORM
# ============================================================
@dataclass
class LaxSeries:
    """
    Checked Lax operator as a truncated series of 64x64 operators on three glued
    sites. The plain operator is L = P_aj P_bj (checked).
    """
    series: PowerSeries
    support: FrozenSet[Key]
    free_parameters: Dict[int, int] = field(default_factory=dict)
    relation: str = "L = P_aj P_bj checked"

    def __post_init__(self):
        c0 = self.series[0]
        if not (c0 - Operator.identity(c0.layout, c0.domain)).is_zero(1e-12):
            raise ValueError("Checked Lax operator must start with the identity")
        for k, c in enumerate(self.series.coefficients):
            if c.dim != LAX_DIM:
                raise ValueError(f"Coefficient {k} is {c.dim}x{c.dim}, expected {LAX_DIM}x{LAX_DIM}")
            if not is_face_diagonal(c):
                raise ValueError(f"Coefficient {k} is not diagonal in its first and last qubit")

    @property
    def order(self) -> int:
        return self.series.order

    def coefficient(self, k: int) -> Operator:
        return self.series[k]

    def entry_series(self, key: Key) -> PowerSeries:
        r, c = key
        return PowerSeries([Fraction(op.get(r, c)) for op in self.series.coefficients], self.order)

    def evaluate(self, u) -> Operator:
        return self.series.evaluate(u)


# ============================================================
# CLOSED FORMS
# ============================================================
Form = Union[Poly, RationalFunction, AlgebraicEntry, None]


@dataclass
class LaxEntry:
    """One nonzero entry f_k(u) of the checked Lax operator and how it was closed."""
    key: Key
    name: str
    tag: str
    series: PowerSeries
    form: Form = None
    base: Optional[str] = None
    ratio: Optional[RationalFunction] = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"Unknown entry tag {self.tag!r}")

    @property
    def closed(self) -> bool:
        return self.tag != SERIES

    def rational(self) -> Optional[RationalFunction]:
        if self.tag == POLYNOMIAL:
            return RationalFunction(self.form, Poly(1, U, domain="QQ"))
        if self.tag in (PADE, RATIO, TRANSFER):
            return self.form
        return None

    def taylor(self, order: int) -> PowerSeries:
        if self.tag == POLYNOMIAL:
            return poly_series(self.form, order)
        if self.tag == SERIES:
            return self.series.truncate(order)
        return self.form.taylor(order)

    def value(self, u):
        """Exact value at a rational point, float at a float point; algebraic entries always give floats."""
        if self.tag == POLYNOMIAL:
            return float(self.form.eval(u)) if isinstance(u, float) else poly_value(self.form, Fraction(u))
        if self.tag == SERIES:
            return self.series.evaluate(u)
        return self.form.evaluate(u)

    def residue(self, u: Fraction, p: int, root: Optional[int] = None) -> int:
        if self.tag == ALGEBRAIC:
            a, b, _ = self.form.quadratic_parts(u)
            return (to_residue(a, p) + to_residue(b, p) * root) % p
        return to_residue(self.value(Fraction(u)), p)


@dataclass
class LaxEntryTable:
    """Closed (or partially closed) entries of the checked Lax operator at pinned parameters."""
    weights: FaceWeights
    entries: Dict[Key, LaxEntry]
    order_solved: int

    def names(self) -> Dict[str, Key]:
        return {e.name: k for k, e in self.entries.items()}

    def unresolved(self) -> List[LaxEntry]:
        return [e for e in self.entries.values() if not e.closed]

    def counts(self) -> Dict[str, int]:
        out = {tag: 0 for tag in TAGS}
        for e in self.entries.values():
            out[e.tag] += 1
        return out

    def algebraic(self) -> List[LaxEntry]:
        return [e for e in self.entries.values() if e.tag == ALGEBRAIC]

    def h(self) -> Operator:
        values = {k: e.series[1] for k, e in self.entries.items() if e.series.order >= 1 and e.series[1]}
        return Operator.from_entries(values, LAX_LAYOUT)

    def matrix_at(self, u) -> Operator:
        """Checked Lax operator at u; exact when u is rational and no entry needs a square root."""
        exact = not isinstance(u, float) and not self.algebraic()
        if exact:
            return Operator.from_entries({k: e.value(Fraction(u)) for k, e in self.entries.items()}, LAX_LAYOUT)
        point = float(u)
        values = {k: float(e.value(point)) for k, e in self.entries.items()}
        return Operator.from_entries(values, LAX_LAYOUT, REAL)

    def matrix_mod(self, u: Fraction, p: int) -> Optional[np.ndarray]:
        """
        Image of the checked Lax operator in GF(p) through one embedding of the
        quadratic extension; None when the radicand is not a square mod p.
        """
        root = None
        radicands = {e.form.quadratic_parts(Fraction(u))[2] for e in self.algebraic()}
        if len(radicands) > 1:
            raise ValueError("Entries with different radicands need more than one square root")
        if radicands:
            g = to_residue(radicands.pop(), p)
            roots = sqrt_mod(g, p, all_roots=True) if g else [0]
            if not roots:
                return None
            root = int(min(roots))
        out = np.zeros((LAX_DIM, LAX_DIM), dtype=np.int64)
        for (r, c), e in self.entries.items():
            out[r, c] = e.residue(Fraction(u), p, root)
        return out

    def series(self, order: Optional[int] = None) -> LaxSeries:
        order = self.order_solved if order is None else order
        coeffs = []
        taylors = {k: e.taylor(order) for k, e in self.entries.items()}
        for n in range(order + 1):
            coeffs.append(Operator.from_entries({k: s[n] for k, s in taylors.items() if s[n]}, LAX_LAYOUT))
        return LaxSeries(PowerSeries(coeffs, order), frozenset(self.entries))


# ============================================================
# TRANSFER MATRICES AND INTERTWINERS
# ============================================================
@dataclass
class TransferSeries:
    """Transfer matrix t(u) on N qubits as a truncated operator series; aux space C^4 x C^4."""
    series: PowerSeries
    N: int
    aux_dim: int = 16

    @property
    def order(self) -> int:
        return self.series.order


@dataclass
class Intertwiner:
    """Checked-form intertwiner at fixed spectral points, with its certificates."""
    kind: str
    points: Tuple[Fraction, ...]
    matrix: np.ndarray
    residual: float
    condition: float
    face_diagonal: bool
    null_dimension: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"Unknown intertwiner kind {self.kind!r}")

    def to_json(self) -> Dict:
        return {
            "kind": self.kind,
            "points": [f"{p.numerator}/{p.denominator}" for p in self.points],
            "dim": int(self.matrix.shape[0]),
            "residual": self.residual,
            "condition": self.condition,
            "face_diagonal": self.face_diagonal,
            "null_dimension": self.null_dimension,
        }

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Tuple

import numpy as np

from linalg.scalars import format_rational

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
BLOCK = 3

Z = "Z"
Z_PRIME = "Zp"
TENSORS = (Z, Z_PRIME)
L = "L"
L_PRIME = "Lp"
R = "R"
R_PRIME = "Rp"
BOUNDARY = (L, L_PRIME, R, R_PRIME)

MINUS = "-"
ZERO = "0"
PLUS = "+"
BANDS = (MINUS, ZERO, PLUS)

NULLSPACE = "nullspace"
LEAST_SQUARES = "nullspace+least-squares"
RATIONAL_LIFT = "least-squares+rational-lift"


class SingularParametersError(RuntimeError):
    """The patch ansatz degenerates at these bulk parameters."""


class ExactLiftError(RuntimeError):
    """No start of a level could be pinned to rational entries that solve the level exactly."""


def level_slice(n: int) -> slice:
    """Rows/columns of level n (1-based) in the auxiliary space."""
    return slice(BLOCK * (n - 1), BLOCK * n)


def band_position(n: int, band: str) -> Tuple[int, int]:
    """(row level, column level) of the block Z^{(n, band)}."""
    if band == ZERO:
        return n, n
    if band == PLUS:
        return n - 1, n
    if band == MINUS:
        return n, n - 1
    raise ValueError(f"Unknown band {band!r}")


def _as_float(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


# ============================================================
# STEADY STATE
# ============================================================
@dataclass
class NessPair:
    """Probability vectors at the two half steps, p' = U_even p and p = U_odd p'."""
    p: np.ndarray
    p_prime: np.ndarray
    N: int

    @property
    def exact(self) -> bool:
        return self.p.dtype == object

    def normalized(self) -> "NessPair":
        sp, spp = self.p.sum(), self.p_prime.sum()
        if sp == 0 or spp == 0:
            raise ValueError("Cannot normalize a vanishing probability vector")
        return NessPair(self.p / sp, self.p_prime / spp, self.N)

    def to_float(self) -> "NessPair":
        return NessPair(_as_float(self.p), _as_float(self.p_prime), self.N)

    def check(self, u_even, u_odd, tol: float = 1e-10) -> Dict[str, bool]:
        """Fixed-point, positivity and normalization flags."""
        if self.exact:
            half = list(u_even.apply(list(self.p))) == list(self.p_prime)
            back = list(u_odd.apply(list(self.p_prime))) == list(self.p)
            norm = self.p.sum() == 1 and self.p_prime.sum() == 1
        else:
            ue, uo = u_even.to_sparse(), u_odd.to_sparse()
            half = np.allclose(ue @ self.p, self.p_prime, atol=tol)
            back = np.allclose(uo @ self.p_prime, self.p, atol=tol)
            norm = abs(self.p.sum() - 1) <= tol and abs(self.p_prime.sum() - 1) <= tol
        return {
            "half_step": bool(half),
            "full_step": bool(back),
            "positive": bool(all(v > 0 for v in self.p) and all(v > 0 for v in self.p_prime)),
            "normalized": bool(norm),
        }


# ============================================================
# PATCH MATRIX PRODUCT ANSATZ
# ============================================================
@dataclass
class PatchMPA:
    """
    Bulk 4-tuples Z, Z' as (2, 2, D, D) arrays, block tridiagonal over levels of
    dimension 3, and boundary 4-tuples L, L' (rows) and R, R' (columns) as
    (2, 2, D) arrays supported on level 1. Exact instances hold Fractions in
    object arrays.
    """
    tensors: Dict[str, np.ndarray]
    max_level: int

    def __post_init__(self):
        dim = BLOCK * self.max_level
        for name in TENSORS:
            if self.tensors[name].shape != (2, 2, dim, dim):
                raise ValueError(f"{name} has shape {self.tensors[name].shape}, expected {(2, 2, dim, dim)}")
        for name in BOUNDARY:
            if self.tensors[name].shape != (2, 2, dim):
                raise ValueError(f"{name} has shape {self.tensors[name].shape}, expected {(2, 2, dim)}")

    @classmethod
    def zeros(cls, max_level: int, exact: bool = False) -> "PatchMPA":
        dim = BLOCK * max_level
        if exact:
            def make(shape):
                return np.full(shape, Fraction(0), dtype=object)
        else:
            def make(shape):
                return np.zeros(shape)
        tensors = {name: make((2, 2, dim, dim)) for name in TENSORS}
        tensors.update({name: make((2, 2, dim)) for name in BOUNDARY})
        return cls(tensors, max_level)

    @property
    def dim(self) -> int:
        return BLOCK * self.max_level

    @property
    def exact(self) -> bool:
        return self.tensors[Z].dtype == object

    def block(self, name: str, i: int, j: int) -> Optional[np.ndarray]:
        """(2, 2, 3, 3) block between levels i and j, or None outside the band."""
        if abs(i - j) > 1 or min(i, j) < 1 or max(i, j) > self.max_level:
            return None
        return self.tensors[name][:, :, level_slice(i), level_slice(j)]

    def boundary(self, name: str) -> np.ndarray:
        """Level-1 components, shaped (2, 2, 1, 3) for rows and (2, 2, 3, 1) for columns."""
        v = self.tensors[name][:, :, level_slice(1)]
        return v[:, :, None, :] if name in (L, L_PRIME) else v[:, :, :, None]

    def set_block(self, name: str, n: int, band: str, value: np.ndarray) -> None:
        i, j = band_position(n, band)
        self.tensors[name][:, :, level_slice(i), level_slice(j)] = value

    def set_boundary(self, name: str, value: np.ndarray) -> None:
        self.tensors[name][:, :, level_slice(1)] = value

    def truncated(self, max_level: int) -> "PatchMPA":
        if max_level > self.max_level:
            raise ValueError(f"Cannot truncate level {self.max_level} to {max_level}")
        dim = BLOCK * max_level
        out = {name: self.tensors[name][:, :, :dim, :dim].copy() for name in TENSORS}
        out.update({name: self.tensors[name][:, :, :dim].copy() for name in BOUNDARY})
        return PatchMPA(out, max_level)

    def extended(self, max_level: int) -> "PatchMPA":
        """Copy with zero blocks appended up to max_level."""
        out = PatchMPA.zeros(max_level, self.exact)
        dim = self.dim
        for name in TENSORS:
            out.tensors[name][:, :, :dim, :dim] = self.tensors[name]
        for name in BOUNDARY:
            out.tensors[name][:, :, :dim] = self.tensors[name]
        return out

    def to_float(self) -> "PatchMPA":
        return PatchMPA({k: _as_float(v) for k, v in self.tensors.items()}, self.max_level)

    def level_entries(self, n: int) -> np.ndarray:
        """Every entry introduced at level n, flattened."""
        parts = []
        if n == 1:
            parts += [self.tensors[name][:, :, level_slice(1)].ravel() for name in BOUNDARY]
        for name in TENSORS:
            for band in BANDS:
                if n == 1 and band != ZERO:
                    continue
                i, j = band_position(n, band)
                parts.append(self.block(name, i, j).ravel())
        return np.concatenate(parts)


@dataclass
class LevelSolution:
    level: int
    path: str
    residuals: Dict[str, float] = field(default_factory=dict)
    unknowns: int = 0
    accepted_starts: int = 0
    min_abs_entry: float = 0.0
    seconds: float = 0.0
    ok: bool = False
    message: str = ""

    @property
    def all_nonzero(self) -> bool:
        return self.min_abs_entry > 0

    def to_json(self) -> Dict:
        return {
            "level": self.level,
            "path": self.path,
            "residuals": self.residuals,
            "unknowns": self.unknowns,
            "accepted_starts": self.accepted_starts,
            "min_abs_entry": self.min_abs_entry,
            "seconds": round(self.seconds, 4),
            "ok": self.ok,
            "message": self.message,
        }


def format_entry(v) -> str:
    return format_rational(v) if isinstance(v, Fraction) else repr(float(v))

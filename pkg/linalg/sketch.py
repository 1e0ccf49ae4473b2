import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla

from linalg.chain import LocalSum, local_view
from linalg.modular import ModularResult, mod_matmul, nullspace_mod, reconstruct, solve_mod

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
SKETCH_RANGE = 7
SKETCH_MARGIN = 48
GRAM_TOL = 1e-11
SUPPORT_TOL = 1e-8

RhsFn = Callable[[np.ndarray, np.ndarray, Optional[int]], np.ndarray]


# ============================================================
# SKETCH PRIMITIVES
# ============================================================
def sketch_vectors(count: int, dim: int, seed: int) -> np.ndarray:
    """Small-integer test vectors; the same integers serve the float and every modular image."""
    rng = np.random.default_rng(seed)
    return rng.integers(-SKETCH_RANGE, SKETCH_RANGE + 1, size=(count, dim), dtype=np.int64)


def in_field(vectors: np.ndarray, p: Optional[int]) -> np.ndarray:
    return vectors.astype(np.float64) if p is None else vectors % p


def pair_count(unknowns: int, margin: int = SKETCH_MARGIN) -> int:
    return max(2, isqrt(unknowns + margin) + 1)


def gram_rows(ws: np.ndarray, vs: np.ndarray, placements: Sequence[Sequence[int]], d: int,
              p: Optional[int] = None) -> np.ndarray:
    """
    Row (j, k), column a*D + b holds sum over placements of w_j^T E_ab v_k, where E_ab
    is the matrix unit placed on the given sites. Shape (J*K, D*D).
    """
    total = None
    for sites in placements:
        W = local_view(ws, sites, d)
        V = local_view(vs, sites, d)
        J, D, R = W.shape
        K = V.shape[0]
        Wm = W.reshape(J * D, R)
        Vt = np.ascontiguousarray(V.reshape(K * D, R).T)
        M = Wm @ Vt if p is None else mod_matmul(Wm, Vt, p)
        block = M.reshape(J, D, K, D).transpose(0, 2, 1, 3).reshape(J * K, D * D)
        if total is None:
            total = block
        else:
            total = total + block if p is None else (total + block) % p
    return total


def pair_dots(a: np.ndarray, b: np.ndarray, p: Optional[int]) -> np.ndarray:
    """Flattened (J*K,) matrix of a_j . b_k."""
    if p is None:
        return (a @ b.T).ravel()
    return mod_matmul(a % p, np.ascontiguousarray((b % p).T), p).ravel()


def commutator_rhs(known: LocalSum, target: LocalSum) -> RhsFn:
    """w^T [known, target] v for all sketch pairs."""
    known_t = known.transpose()
    target_t = target.transpose()

    def rhs(ws: np.ndarray, vs: np.ndarray, p: Optional[int]) -> np.ndarray:
        cache: Dict = {}
        first = pair_dots(known_t.apply(ws, p, cache), target.apply(vs, p, cache), p)
        second = pair_dots(target_t.apply(ws, p, cache), known.apply(vs, p, cache), p)
        return first - second if p is None else (first - second) % p

    return rhs


# ============================================================
# LINEAR SYSTEMS IN LOCAL OPERATOR ENTRIES
# ============================================================
@dataclass
class CommutatorEquation:
    """
    [X, target] + known = 0, where known(ws, vs, p) returns w^T (known part) v.
    With right_vectors set, the left side runs over the whole standard basis and only
    that many random right vectors are drawn.
    """
    target: LocalSum
    known: Optional[RhsFn] = None
    pairs: int = 0
    right_vectors: int = 0


@dataclass
class LocalCommutatorSystem:
    """
    Unknown local operator X on d**m-dimensional local space, entries restricted to
    `columns` (flattened a*D + b), placed on every entry of `placements` of a chain
    of dimension `dim`. Every equation contributes J*K sketched rows; optional exact
    integer `extra_rows` (homogeneous) are appended.
    """
    d: int
    dim: int
    placements: List[Tuple[int, ...]]
    columns: np.ndarray
    equations: List[CommutatorEquation] = field(default_factory=list)
    extra_rows: Optional[np.ndarray] = None
    seed: int = 0

    @property
    def unknowns(self) -> int:
        return len(self.columns)

    def _pairs(self, eq: CommutatorEquation) -> int:
        return eq.pairs or pair_count(self.unknowns)

    def build(self, p: Optional[int] = None, homogeneous: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        blocks, rhs = [], []
        for idx, eq in enumerate(self.equations):
            if eq.right_vectors:
                ws = in_field(np.eye(self.dim, dtype=np.int64), p)
                vs = in_field(sketch_vectors(eq.right_vectors, self.dim, self.seed * 1009 + idx), p)
            else:
                n_pairs = self._pairs(eq)
                raw = sketch_vectors(2 * n_pairs, self.dim, self.seed * 1009 + idx)
                ws, vs = in_field(raw[:n_pairs], p), in_field(raw[n_pairs:], p)
            cache: Dict = {}
            tw = eq.target.transpose().apply(ws, p, cache)
            tv = eq.target.apply(vs, p, cache)
            rows = gram_rows(ws, tv, self.placements, self.d, p) - gram_rows(tw, vs, self.placements, self.d, p)
            if p is not None:
                rows %= p
            blocks.append(rows[:, self.columns])
            if homogeneous or eq.known is None:
                rhs.append(np.zeros(rows.shape[0], dtype=rows.dtype))
            else:
                b = -eq.known(ws, vs, p)
                rhs.append(b if p is None else b % p)
        if self.extra_rows is not None and len(self.extra_rows):
            extra = self.extra_rows.astype(np.float64) if p is None else self.extra_rows % p
            blocks.append(extra)
            rhs.append(np.zeros(extra.shape[0], dtype=blocks[0].dtype))
        return np.vstack(blocks), np.concatenate(rhs)

    def restricted(self, keep: np.ndarray) -> "LocalCommutatorSystem":
        """Same equations with only the unknowns at positions `keep` of self.columns."""
        extra = None
        if self.extra_rows is not None and len(self.extra_rows):
            extra = self.extra_rows[:, keep]
            extra = extra[np.any(extra != 0, axis=1)]
        return LocalCommutatorSystem(self.d, self.dim, self.placements, self.columns[keep],
                                     [CommutatorEquation(eq.target, eq.known, pair_count(len(keep)),
                                                         eq.right_vectors)
                                      for eq in self.equations],
                                     extra, self.seed + 1)


def float_kernel(A: np.ndarray, tol: float = GRAM_TOL) -> np.ndarray:
    """Orthonormal kernel rows of A from the Gram eigendecomposition."""
    if A.shape[1] == 0:
        return np.zeros((0, 0))
    G = A.T @ A
    evals, evecs = sla.eigh(G)
    cutoff = tol * max(float(evals[-1]), 1.0)
    return evecs[:, evals <= cutoff].T


def support_of(kernel: np.ndarray, tol: float = SUPPORT_TOL) -> np.ndarray:
    if kernel.size == 0:
        return np.zeros(0, dtype=np.int64)
    scale = np.abs(kernel).max()
    return np.flatnonzero(np.any(np.abs(kernel) > tol * scale, axis=0))


def solve_affine(system: LocalCommutatorSystem, label: str) -> Optional[ModularResult]:
    """Exact solution with every free unknown at zero (leftmost pivots), or None if inconsistent."""
    logger.info(f"{label}: {system.unknowns} unknowns, {len(system.equations)} commutator equation(s)")

    def fn(p: int):
        A, b = system.build(p)
        return solve_mod(A, b, p)

    return reconstruct(fn, label)


def solve_particular(system: LocalCommutatorSystem, label: str) -> Optional[List[Fraction]]:
    result = solve_affine(system, label)
    return None if result is None else result.values


def exact_kernel(system: LocalCommutatorSystem, label: str) -> List[List[Fraction]]:
    """Canonical exact kernel basis (one vector per free unknown) of the homogeneous system."""
    n = system.unknowns

    def fn(p: int):
        A, _ = system.build(p, homogeneous=True)
        K, pivots = nullspace_mod(A, p)
        return K.ravel(), pivots

    result = reconstruct(fn, label)
    values = [] if result is None else result.values
    rows = len(values) // n if n else 0
    return [values[i * n:(i + 1) * n] for i in range(rows)]



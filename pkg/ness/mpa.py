import logging
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np
from sympy import Matrix, Rational

from model.gates import left_boundary_gate, right_boundary_gate
from model.schemas import BoundaryDriving, FaceWeights
from ness.schemas import (BLOCK, L, L_PRIME, R, R_PRIME, Z, Z_PRIME, NessPair, PatchMPA, level_slice)

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
GAUGE_COND_LIMIT = 1e12

LEFT = "left"
RIGHT = "right"
LEFT_BULK = "left-bulk"
BULK_RIGHT = "bulk-right"
MINUS_MINUS = "minus-minus"
PLUS_PLUS = "plus-plus"
ZERO_PLUS = "zero-plus"
ZERO_MINUS = "zero-minus"
PLUS_MINUS = "plus-minus"


# ============================================================
# LOCAL INGREDIENTS
# ============================================================
def face_tensor(w: FaceWeights, exact: bool) -> np.ndarray:
    """F[s1, s2, s3, t] = f_{s1 s3}[s2][t]: the gate on (s1, t, s3) writes s2 in the middle."""
    F = np.empty((2, 2, 2, 2), dtype=object if exact else np.float64)
    for s1 in (0, 1):
        for s3 in (0, 1):
            f = w.face_matrix(s1, s3)
            for s2 in (0, 1):
                for t in (0, 1):
                    F[s1, s2, s3, t] = Fraction(f[s2][t]) if exact else float(f[s2][t])
    return F


def boundary_gates(drv: BoundaryDriving, exact: bool) -> Tuple[np.ndarray, np.ndarray]:
    """(U^L, U^R) as 4x4 arrays on the combined index 2*s + s'."""
    left, right = left_boundary_gate(drv), right_boundary_gate(drv)
    if exact:
        return left.to_dense(), right.to_dense()
    return left.to_float(), right.to_float()


def pair(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Products A_{s1 t} B_{t s3} of (..., 2, 2, a, b) tuples, indexed (..., s1, t, s3, a, c)."""
    return A[..., :, :, None, :, :] @ B[..., None, :, :, :, :]


def apply_face(F: np.ndarray, PP: np.ndarray) -> np.ndarray:
    """Gate on the shared middle site: sum_t F[s1, s2, s3, t] PP[s1, t, s3]."""
    out = np.zeros_like(PP)
    for s1 in (0, 1):
        for s2 in (0, 1):
            for s3 in (0, 1):
                out[..., s1, s2, s3, :, :] = (F[s1, s2, s3, 0] * PP[..., s1, 0, s3, :, :]
                                              + F[s1, s2, s3, 1] * PP[..., s1, 1, s3, :, :])
    return out


def apply_pair_gate(G: np.ndarray, V: np.ndarray) -> np.ndarray:
    """4x4 gate on the physical pair of a (..., 2, 2, a, b) tuple."""
    flat = V.reshape(V.shape[:-4] + (4,) + V.shape[-2:])
    out = np.zeros_like(flat)
    for x in range(4):
        acc = None
        for y in range(4):
            if G[x, y]:
                term = G[x, y] * flat[..., y, :, :]
                acc = term if acc is None else acc + term
        if acc is not None:
            out[..., x, :, :] = acc
    return out.reshape(V.shape)


# ============================================================
# RESIDUALS
# ============================================================
def _pair_sum(src, first: str, second: str, i: int, k: int) -> Optional[np.ndarray]:
    total = None
    for j in (i - 1, i, i + 1):
        if j < 1 or j > src.max_level:
            continue
        a, b = src.block(first, i, j), src.block(second, j, k)
        if a is None or b is None:
            continue
        term = pair(a, b)
        total = term if total is None else total + term
    return total


def bulk_block(src, F: np.ndarray, i: int, k: int) -> np.ndarray:
    """Block (i, k) of U_123 Z_12 Z'_23 - Z'_12 Z_23, indexed (s1, s2, s3)."""
    lhs = _pair_sum(src, Z, Z_PRIME, i, k)
    rhs = _pair_sum(src, Z_PRIME, Z, i, k)
    out = None
    if lhs is not None:
        out = apply_face(F, lhs)
    if rhs is not None:
        out = -rhs if out is None else out - rhs
    if out is None:
        raise ValueError(f"Block ({i}, {k}) lies outside the band")
    return out


def left_bulk(src, F: np.ndarray, k: int) -> np.ndarray:
    """Level-k component of U_123 L_12 Z'_23 - L'_12 Z_23."""
    return apply_face(F, pair(src.boundary(L), src.block(Z_PRIME, 1, k))) - pair(src.boundary(L_PRIME), src.block(Z, 1, k))


def bulk_right(src, F: np.ndarray, i: int) -> np.ndarray:
    """Level-i component of U_123 Z_12 R'_23 - Z'_12 R_23."""
    return apply_face(F, pair(src.block(Z, i, 1), src.boundary(R_PRIME))) - pair(src.block(Z_PRIME, i, 1), src.boundary(R))


def level_residuals(src, F: np.ndarray, gates: Tuple[np.ndarray, np.ndarray], n: int) -> Dict[str, np.ndarray]:
    """
    Equations completed by the entries of level n. Level 1 holds the boundary
    vectors and the diagonal bulk blocks; level 2 adds the second components of
    the boundary relations; from level 3 on the (n, n-2) and (n-2, n) blocks are
    linear in the new entries.
    """
    UL, UR = gates
    if n == 1:
        return {
            RIGHT: src.boundary(R_PRIME) - apply_pair_gate(UR, src.boundary(R)),
            LEFT: src.boundary(L) - apply_pair_gate(UL, src.boundary(L_PRIME)),
            f"{LEFT_BULK}@1": left_bulk(src, F, 1),
            f"{BULK_RIGHT}@1": bulk_right(src, F, 1),
        }
    out: Dict[str, np.ndarray] = {}
    if n == 2:
        out[f"{LEFT_BULK}@2"] = left_bulk(src, F, 2)
        out[f"{BULK_RIGHT}@2"] = bulk_right(src, F, 2)
    else:
        out[MINUS_MINUS] = bulk_block(src, F, n, n - 2)
        out[PLUS_PLUS] = bulk_block(src, F, n - 2, n)
    out[ZERO_PLUS] = bulk_block(src, F, n - 1, n)
    out[ZERO_MINUS] = bulk_block(src, F, n, n - 1)
    out[PLUS_MINUS] = bulk_block(src, F, n - 1, n - 1)
    return out


def linear_keys(n: int) -> List[str]:
    """Equations homogeneous and linear in the level-n entries."""
    if n == 1:
        return [RIGHT, LEFT]
    if n == 2:
        return [f"{LEFT_BULK}@2", f"{BULK_RIGHT}@2"]
    return [MINUS_MINUS, PLUS_PLUS]


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a.astype(np.float64)))) if a.size else 0.0


def residuals(mpa: PatchMPA, w: FaceWeights, drv: BoundaryDriving,
              level: Optional[int] = None) -> Dict[int, Dict[str, np.ndarray]]:
    """Residual arrays per level (all levels when level is None); exact for exact tensors."""
    F = face_tensor(w, mpa.exact)
    gates = boundary_gates(drv, mpa.exact)
    levels = range(1, mpa.max_level + 1) if level is None else [level]
    out = {}
    for n in levels:
        if not 1 <= n <= mpa.max_level:
            raise ValueError(f"Level {n} outside 1..{mpa.max_level}")
        out[n] = level_residuals(mpa, F, gates, n)
    return out


def residual_norms(res: Dict[int, Dict[str, np.ndarray]]) -> Dict[int, Dict[str, float]]:
    return {n: {k: _max_abs(v) for k, v in eqs.items()} for n, eqs in res.items()}


def face_algebra_residuals(mpa: PatchMPA, w: FaceWeights) -> Dict[Tuple[int, int, int], np.ndarray]:
    """
    The eight exchange relations sum_t f_{s1 s3}[s2][t] Z_{s1 t} Z'_{t s3} = Z'_{s1 s2} Z_{s2 s3}
    as full auxiliary matrices. The top diagonal block needs the next level and is zeroed.
    """
    F = face_tensor(w, mpa.exact)
    res = apply_face(F, pair(mpa.tensors[Z], mpa.tensors[Z_PRIME])) - pair(mpa.tensors[Z_PRIME], mpa.tensors[Z])
    top = level_slice(mpa.max_level)
    res[..., top, top] = Fraction(0) if mpa.exact else 0.0
    return {(s1, s2, s3): res[s1, s2, s3] for s1 in (0, 1) for s2 in (0, 1) for s3 in (0, 1)}


# ============================================================
# CONTRACTION
# ============================================================
def _sweep(first: np.ndarray, bulk: List[np.ndarray], last: np.ndarray) -> np.ndarray:
    dim = first.shape[-1]
    state = first.reshape(4, dim)
    for T in bulk:
        rows = state.shape[0]
        bit = np.arange(rows) % 2
        new = np.empty((rows, 2, dim), dtype=state.dtype)
        for s in (0, 1):
            mask = bit == s
            for s_next in (0, 1):
                new[mask, s_next] = state[mask] @ T[s, s_next]
        state = new.reshape(2 * rows, dim)
    bit = np.arange(state.shape[0]) % 2
    out = np.empty((state.shape[0], 2), dtype=state.dtype)
    for s in (0, 1):
        mask = bit == s
        for s_last in (0, 1):
            out[mask, s_last] = state[mask] @ last[s, s_last]
    return out.reshape(-1)


def _check_chain(mpa: PatchMPA, N: int) -> None:
    if N < 4 or N % 2:
        raise ValueError(f"The patch ansatz needs an even chain of at least 4 sites, got N={N}")
    if mpa.max_level < N // 2:
        raise ValueError(f"N={N} needs levels up to {N // 2}, the ansatz stops at {mpa.max_level}")


def mpa_contract(mpa: PatchMPA, N: int) -> NessPair:
    """
    p(s) = L_{s1 s2} Z'_{s2 s3} Z_{s3 s4} ... Z'_{s_{N-2} s_{N-1}} R_{s_{N-1} s_N} and p' with
    the roles of primed and unprimed tensors swapped; unnormalized.
    """
    _check_chain(mpa, N)
    t = mpa.tensors
    # patch (k, k+1) for k = 2 .. N-2
    bulk_p = [t[Z_PRIME] if k % 2 == 0 else t[Z] for k in range(2, N - 1)]
    bulk_pp = [t[Z] if k % 2 == 0 else t[Z_PRIME] for k in range(2, N - 1)]
    p = _sweep(t[L], bulk_p, t[R])
    p_prime = _sweep(t[L_PRIME], bulk_pp, t[R_PRIME])
    return NessPair(p, p_prime, N)


def mpa_gap(mpa: PatchMPA, N: int):
    """Normalized weight of the empty chain in p, without enumerating configurations."""
    _check_chain(mpa, N)
    t = mpa.tensors
    bulk = [t[Z_PRIME] if k % 2 == 0 else t[Z] for k in range(2, N - 1)]
    empty = t[L][0, 0]
    state = [t[L][0, s] + t[L][1, s] for s in (0, 1)]
    for T in bulk:
        empty = empty @ T[0, 0]
        state = [state[0] @ T[0, s] + state[1] @ T[1, s] for s in (0, 1)]
    total = sum(state[s] @ t[R][s, last] for s in (0, 1) for last in (0, 1))
    if total == 0:
        raise ValueError(f"The ansatz contracts to zero total weight at N={N}")
    value = (empty @ t[R][0, 0]) / total
    return Fraction(value) if mpa.exact else float(value)


# ============================================================
# GAUGE
# ============================================================
def _block_inverse(G: np.ndarray, max_level: int, exact: bool) -> np.ndarray:
    dim = BLOCK * max_level
    if G.shape != (dim, dim):
        raise ValueError(f"Gauge matrix has shape {G.shape}, expected {(dim, dim)}")
    inv = np.full((dim, dim), Fraction(0), dtype=object) if exact else np.zeros((dim, dim))
    for n in range(1, max_level + 1):
        sl = level_slice(n)
        rest = np.ones(dim, dtype=bool)
        rest[sl] = False
        if any(v != 0 for v in np.ravel(G[sl][:, rest])):
            raise ValueError(f"Gauge matrix is not block diagonal at level {n}")
        b = G[sl, sl]
        if exact:
            m = Matrix(BLOCK, BLOCK, [Rational(Fraction(v).numerator, Fraction(v).denominator) for v in b.ravel()])
            if m.det() == 0:
                raise ValueError(f"Gauge block at level {n} is singular")
            mi = m.inv()
            inv[sl, sl] = np.array([[Fraction(int(mi[r, c].p), int(mi[r, c].q)) for c in range(BLOCK)]
                                    for r in range(BLOCK)], dtype=object)
        else:
            b = np.asarray(b, dtype=np.float64)
            if not np.isfinite(np.linalg.cond(b)) or np.linalg.cond(b) > GAUGE_COND_LIMIT:
                raise ValueError(f"Gauge block at level {n} is singular")
            inv[sl, sl] = np.linalg.inv(b)
    return inv


def gauge_transform(mpa: PatchMPA, G: np.ndarray, H: Optional[np.ndarray] = None) -> PatchMPA:
    """
    Z -> G Z H^-1, Z' -> H Z' G^-1, L -> L H^-1, L' -> L' G^-1, R -> G R, R' -> H R'.
    Contractions are invariant for any block-diagonal G, H; the local relations
    are preserved when H = G (the default).
    """
    H = G if H is None else H
    Gi = _block_inverse(G, mpa.max_level, mpa.exact)
    Hi = Gi if H is G else _block_inverse(H, mpa.max_level, mpa.exact)
    t = mpa.tensors
    out = {
        Z: G @ t[Z] @ Hi,
        Z_PRIME: H @ t[Z_PRIME] @ Gi,
        L: t[L] @ Hi,
        L_PRIME: t[L_PRIME] @ Gi,
        R: (G @ t[R][..., None])[..., 0],
        R_PRIME: (H @ t[R_PRIME][..., None])[..., 0],
    }
    return PatchMPA(out, mpa.max_level)


def uniform_mpa(max_level: int = 1, exact: bool = True) -> PatchMPA:
    """Every tensor equal to 1 on the first level state: the uniform measure."""
    mpa = PatchMPA.zeros(max_level, exact)
    one = Fraction(1) if exact else 1.0
    for name in (Z, Z_PRIME):
        mpa.tensors[name][:, :, 0, 0] = one
    for name in (L, L_PRIME, R, R_PRIME):
        mpa.tensors[name][:, :, 0] = one
    return mpa

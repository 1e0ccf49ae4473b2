import logging
from fractions import Fraction
from math import ceil
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.optimize import linear_sum_assignment

from lax.schemas import A_OPERATOR, KINDS, R_MATRIX, Intertwiner, IntertwinerError, LaxEntryTable
from lax.transfer import checked_to_lax, routing
from linalg.chain import apply_local
from linalg.operator import Operator, embed_sites, face_mask
from linalg.scalars import rational_reconstruct
from model.gates import build_d_operator

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
MATCH_TOL = 1e-6
CLUSTER_TOL = 1e-7
NULL_TOL = 1e-9
RESIDUAL_TOL = 1e-8
FACE_TOL = 1e-8
COND_LIMIT = 1e10
ROW_MARGIN = 32
MAX_UNKNOWNS = 6000
LIFT_DENOMINATOR = 10 ** 4
LIFT_TOL = 1e-10

Blocks = List[np.ndarray]


# ============================================================
# DENSE BUILDING BLOCKS
# ============================================================
def place(op: np.ndarray, sites: Sequence[int], spaces: int) -> np.ndarray:
    """Dense embedding of a local operator on the given 1-based C^4 spaces."""
    return apply_local(np.eye(4 ** spaces), op, sites, 4).T


def plain_lax(checked: np.ndarray) -> np.ndarray:
    return routing().to_float() @ checked


def pair_swap() -> np.ndarray:
    """Exchanges the auxiliary pairs (a, b) and (c, d)."""
    S = np.zeros((256, 256))
    for ab in range(16):
        for cd in range(16):
            S[cd * 16 + ab, ab * 16 + cd] = 1.0
    return S


def quantum_blocks(M: np.ndarray) -> Blocks:
    """Blocks M_{j'j} over the last C^4 space, each acting on the auxiliary spaces."""
    return [M[r::4, c::4] for r in range(4) for c in range(4)]


def rll_products(checked_v: np.ndarray, checked_u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L_ab(v) L_cd(u) and L_cd(u) L_ab(v) on (a, b, c, d, j)."""
    Lab = place(plain_lax(checked_v), (1, 2, 5), 5)
    Lcd = place(plain_lax(checked_u), (3, 4, 5), 5)
    return Lab @ Lcd, Lcd @ Lab


def a_products(checked_u: np.ndarray, d_operator: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L_ab,j(u) D_cj and D_cj L_ab,j(u) on (a, b, c, j)."""
    L = place(plain_lax(checked_u), (1, 2, 4), 4)
    D = place(d_operator, (3, 4), 4)
    return L @ D, D @ L


def _relative_residual(X: np.ndarray, M: np.ndarray, N: np.ndarray) -> float:
    worst = 0.0
    for Mk, Nk in zip(quantum_blocks(M), quantum_blocks(N)):
        worst = max(worst, float(np.abs(X @ Mk - Nk @ X).max()))
    return worst / max(float(np.abs(X).max()), 1e-300)


def rll_residual(r_checked: np.ndarray, checked_v: np.ndarray, checked_u: np.ndarray) -> float:
    M, N = rll_products(checked_v, checked_u)
    return _relative_residual(pair_swap() @ r_checked, M, N)


def a_residual(a_checked: np.ndarray, checked_u: np.ndarray, d_operator: np.ndarray) -> float:
    M, N = a_products(checked_u, d_operator)
    return _relative_residual(routing().to_float() @ a_checked, M, N)


# ============================================================
# EIGENBASIS MATCHING
# ============================================================
def _clusters(values: np.ndarray, tol: float) -> np.ndarray:
    labels = -np.ones(len(values), dtype=np.int64)
    label = 0
    for i in range(len(values)):
        if labels[i] >= 0:
            continue
        near = (np.abs(values - values[i]) <= tol) & (labels < 0)
        labels[near] = label
        label += 1
    return labels


def _null_vectors(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    _, s, vh = sla.svd(A, full_matrices=False)
    cutoff = NULL_TOL * max(float(s[0]), 1e-300)
    return vh[s <= cutoff].conj(), s


def _intertwine(M: np.ndarray, N: np.ndarray, checked_from: np.ndarray, seed: int,
                label: str) -> Tuple[np.ndarray, int]:
    """
    X with X M_k = N_k X for every quantum block, via the eigenbases of one random
    combination: X = W D V^{-1} with D block diagonal on matched eigenvalue clusters.
    Returns X in its plain form and the dimension of the solution space.
    """
    Ms, Ns = quantum_blocks(M), quantum_blocks(N)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(len(Ms)) + 1j * rng.standard_normal(len(Ms))
    Mc = sum(ck * Mk for ck, Mk in zip(c, Ms))
    Nc = sum(ck * Nk for ck, Nk in zip(c, Ns))
    lam, V = sla.eig(Mc)
    mu, W = sla.eig(Nc)
    scale = max(1.0, float(np.abs(lam).max()))
    cost = np.abs(mu[:, None] - lam[None, :])
    rows, cols = linear_sum_assignment(cost)
    mismatch = float(cost[rows, cols].max()) / scale
    if mismatch > MATCH_TOL:
        raise IntertwinerError(f"{label}: the two sides have different spectra",
                               {"spectral_mismatch": mismatch})
    lam_labels = _clusters(lam, CLUSTER_TOL * scale)
    mu_labels = np.empty(len(mu), dtype=np.int64)
    mu_labels[rows] = lam_labels[cols]
    pattern = np.argwhere(mu_labels[:, None] == lam_labels[None, :])
    n = len(pattern)
    logger.info(f"{label}: {n} unknowns over {lam_labels.max() + 1} eigenvalue clusters")
    if n > MAX_UNKNOWNS:
        raise IntertwinerError(f"{label}: spectrum too degenerate ({n} unknowns)", {"unknowns": n})
    if np.linalg.cond(V) > COND_LIMIT or np.linalg.cond(W) > COND_LIMIT:
        logger.warning(f"{label}: badly conditioned eigenbasis")

    V_inv, W_inv = sla.inv(V), sla.inv(W)
    P, Q = pattern[:, 0], pattern[:, 1]
    per_block = ceil((n + ROW_MARGIN) / len(Ms))
    sketch = []
    for Mk, Nk in zip(Ms, Ns):
        Ak, Bk = V_inv @ Mk @ V, W_inv @ Nk @ W
        y = rng.standard_normal((per_block, len(lam)))
        z = rng.standard_normal((per_block, len(lam)))
        Az = z @ Ak.T
        By = y @ Bk
        sketch.append(y[:, P] * Az[:, Q] - By[:, P] * z[:, Q])
    null, s = _null_vectors(np.vstack(sketch))
    if len(null) == 0:
        raise IntertwinerError(f"{label}: the intertwining equation has no solution",
                               {"smallest_singular_values": (s[-3:] / s[0]).tolist()})

    d_vec = null[0]
    if len(null) > 1:
        logger.info(f"{label}: {len(null)}-dimensional solution space, preferring face-diagonal elements")
        d_vec = _face_preferred(null, checked_from @ W, V_inv, P, Q, rng)
    D = np.zeros((len(mu), len(lam)), dtype=complex)
    D[P, Q] = d_vec
    X = W @ D @ V_inv
    X = X / X.flat[int(np.argmax(np.abs(X)))]
    if np.abs(X.imag).max() > 1e-6:
        logger.warning(f"{label}: solution keeps an imaginary part {np.abs(X.imag).max():.2e}")
    return X.real, len(null)


def _face_preferred(null: np.ndarray, CW: np.ndarray, V_inv: np.ndarray, P: np.ndarray, Q: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Combination of the null vectors whose checked form vanishes off the face pattern, if any."""
    off_face = ~face_mask(CW.shape[0])
    rows = []
    for _ in range(2 * len(null) + 4):
        y, z = rng.standard_normal(CW.shape[0]), rng.standard_normal(CW.shape[0])
        G = (CW.T @ (off_face * np.outer(y, z))) @ V_inv.T
        rows.append(G[P, Q])
    F = np.array(rows) @ null.T
    combo, _ = _null_vectors(F)
    if len(combo) == 0:
        logger.warning("No face-diagonal element in the solution space")
        combo = np.eye(len(null))
    return (rng.standard_normal(len(combo)) @ combo) @ null


def _certify(kind: str, checked: np.ndarray, residual: float, points, null_dim: int) -> Intertwiner:
    off_face = ~face_mask(checked.shape[0])
    face = float(np.abs(checked[off_face]).max(initial=0.0)) <= FACE_TOL * float(np.abs(checked).max())
    cond = float(np.linalg.cond(checked))
    out = Intertwiner(kind, tuple(Fraction(p) for p in points), checked, residual, cond, face, null_dim)
    certificate = out.to_json()
    if residual > RESIDUAL_TOL:
        raise IntertwinerError(f"{kind}: residual {residual:.2e} above {RESIDUAL_TOL}", certificate)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IntertwinerError(f"{kind}: no invertible solution (condition {cond:.2e})", certificate)
    if not face:
        raise IntertwinerError(f"{kind}: checked form is not diagonal in its first and last qubit", certificate)
    logger.info(f"{kind} at {[str(Fraction(p)) for p in points]}: residual {residual:.2e}, condition {cond:.2e}")
    return out


# ============================================================
# PUBLIC SOLVES
# ============================================================
def solve_intertwiner(kind: str, checked_u: np.ndarray, checked_v: Optional[np.ndarray] = None,
                      d_operator: Optional[np.ndarray] = None, points: Sequence = (), seed: int = 0) -> Intertwiner:
    """
    R: R_ab,cd L_ab,j(v) L_cd,j(u) = L_cd,j(u) L_ab,j(v) R_ab,cd, checked form S R.
    A: A_abc L_ab,j(u) D_cj = D_cj L_ab,j(u) A_abc, checked form routing^T A.
    Lax inputs are dense checked 64x64 matrices at the spectral points; d_operator is
    the plain 16x16 pair operator of the propagator.
    """
    if kind not in KINDS:
        raise ValueError(f"Unknown intertwiner kind {kind!r}")
    if kind == R_MATRIX:
        if checked_v is None:
            raise ValueError("The R matrix needs the Lax operator at two spectral points")
        M, N = rll_products(checked_v, checked_u)
        swap = pair_swap()
        X, null_dim = _intertwine(M, N, swap, seed, kind)
        return _certify(kind, swap @ X, _relative_residual(X, M, N), points, null_dim)
    if d_operator is None:
        raise ValueError("The A operator needs the pair operator of the propagator")
    M, N = a_products(checked_u, d_operator)
    route_t = routing().to_float().T
    X, null_dim = _intertwine(M, N, route_t, seed, kind)
    return _certify(kind, route_t @ X, _relative_residual(X, M, N), points, null_dim)


def intertwiner_from_table(table: LaxEntryTable, kind: str, points: Sequence[Fraction], seed: int = 0) -> Intertwiner:
    """points are (v, u) for the R matrix and (u,) for the A operator."""
    values = [table.matrix_at(float(p)).to_float() for p in points]
    if kind == R_MATRIX:
        if len(values) != 2:
            raise ValueError(f"The R matrix takes two spectral points, got {len(values)}")
        return solve_intertwiner(kind, values[1], values[0], points=points, seed=seed)
    d = build_d_operator(table.weights).to_float()
    return solve_intertwiner(kind, values[0], d_operator=d, points=points, seed=seed)


# ============================================================
# EXACT LIFT
# ============================================================
def _exact_pair_swap() -> Operator:
    entries = {(cd * 16 + ab, ab * 16 + cd): Fraction(1) for ab in range(16) for cd in range(16)}
    return Operator.from_entries(entries, (4,) * 4)


def lift_checked(found: Intertwiner) -> Optional[Operator]:
    """Rational checked form of a float intertwiner normalized to a unit entry, or None."""
    pivot = np.unravel_index(np.argmax(np.abs(found.matrix)), found.matrix.shape)
    unit = found.matrix / found.matrix[pivot]
    entries = {}
    for r, c in zip(*np.nonzero(np.abs(unit) > FACE_TOL)):
        q = rational_reconstruct(float(unit[r, c]), LIFT_DENOMINATOR, LIFT_TOL)
        if q is None:
            logger.warning(f"{found.kind}: entry ({r}, {c}) = {unit[r, c]:.12g} has no small rational lift")
            return None
        entries[(int(r), int(c))] = q
    spaces = 4 if found.kind == R_MATRIX else 3
    return Operator.from_entries(entries, (4,) * spaces)


def holds_exactly(found: Intertwiner, table: LaxEntryTable) -> bool:
    """
    Lifts the intertwiner to rationals and checks its defining relation in exact
    arithmetic at its spectral points. Needs a table without square-root entries.
    """
    if table.algebraic():
        raise ValueError("Exact intertwiner checks need rational Lax entries")
    checked = lift_checked(found)
    if checked is None:
        return False
    plain = [checked_to_lax(table.matrix_at(Fraction(p))) for p in found.points]
    if found.kind == R_MATRIX:
        layout = (4,) * 5
        Lab = embed_sites(plain[0], (1, 2, 5), layout)
        Lcd = embed_sites(plain[1], (3, 4, 5), layout)
        M, N = Lab @ Lcd, Lcd @ Lab
        X = embed_sites(_exact_pair_swap() @ checked, (1, 2, 3, 4), layout)
    else:
        layout = (4,) * 4
        L = embed_sites(plain[0], (1, 2, 4), layout)
        d = build_d_operator(table.weights)
        D = embed_sites(Operator(d.data, (4, 4), d.domain), (3, 4), layout)
        M, N = L @ D, D @ L
        X = embed_sites(routing() @ checked, (1, 2, 3), layout)
    ok = (X @ M - N @ X).is_zero()
    logger.info(f"{found.kind} at {[str(p) for p in found.points]}: exact relation {'holds' if ok else 'fails'}")
    return ok

import logging
from fractions import Fraction
from math import lcm, log2
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import linalg as sla

from charges.density import extensive_sum
from charges.schemas import GAUGES, LEFT_ALIGNED, ChargeDensity
from linalg.chain import LocalSum, chain_length
from linalg.exact import Infeasible, Row, solve_rows
from linalg.modular import certify_zero, sampled_zero
from linalg.operator import Operator
from linalg.scalars import EXACT, REAL
from linalg.sketch import CommutatorEquation, LocalCommutatorSystem, exact_kernel, float_kernel, support_of

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
RING_ZERO_VECTORS = 3
RING_ZERO_TOL = 1e-9
EXACT_COMMUTATOR_SITES = 12


def as_local_sum(U: Union[Operator, LocalSum]) -> LocalSum:
    if isinstance(U, LocalSum):
        return U
    return LocalSum.single(U, tuple(range(1, U.sites + 1)), U.dim)


def _left_aligned_rows(r: int, lead: int) -> np.ndarray:
    """tr over the first `lead` qubits of the unknown density, one row per remaining entry."""
    rest = 2 ** (r - lead)
    D = 2 ** r
    rows = np.zeros((rest * rest, D * D), dtype=np.int64)
    for a in range(rest):
        for b in range(rest):
            for x in range(2 ** lead):
                rows[a * rest + b, (x * rest + a) * D + (x * rest + b)] = 1
    return rows


def _density(values, columns: np.ndarray, r: int, domain: str) -> Operator:
    D = 2 ** r
    entries = {(int(c) // D, int(c) % D): v for c, v in zip(columns, values) if v}
    return Operator.from_entries(entries, (2,) * r, domain)


def _height(s: LocalSum) -> Tuple[int, int, float]:
    """Common denominator, longest product and an entrywise bound of an exact local sum."""
    den, factors, norm = 1, 0, 0.0
    for coef, placed in s.terms:
        den = lcm(den, Fraction(coef).denominator)
        factors = max(factors, len(placed))
        term = abs(float(coef))
        for pl in placed:
            rows: dict = {}
            for r, _, v in pl.op.entries():
                den = lcm(den, v.denominator)
                rows[r] = rows.get(r, 0.0) + abs(float(v))
            term *= max(rows.values(), default=0.0)
        norm += term
    return den, factors, norm


def commutator_bits(Q: LocalSum, U: LocalSum) -> float:
    """log2 of a bound on the entries of [Q, U] once its denominators are cleared."""
    dq, kq, nq = _height(Q)
    du, ku, nu = _height(U)
    den = lcm(dq, du)
    return (kq + ku + 2) * log2(den) + log2(max(2 * nq * nu, 1.0)) + 1


def commutes_exactly(Q: LocalSum, U: LocalSum, seed: int = 0) -> bool:
    """
    [Q, U] == 0 over the rationals. Up to EXACT_COMMUTATOR_SITES sites every column
    of the commutator is checked; longer chains fall back to randomized vectors.
    """
    cache: dict = {}

    def apply(v: np.ndarray, p: int) -> np.ndarray:
        return (U.apply(Q.apply(v, p, cache), p, cache) - Q.apply(U.apply(v, p, cache), p, cache)) % p

    if chain_length(Q.dim, 2) <= EXACT_COMMUTATOR_SITES:
        return certify_zero(apply, Q.dim, commutator_bits(Q, U))
    return sampled_zero(apply, Q.dim, seed=seed)


def _drop_ring_zero(basis: List[Operator], N: int, shift_period: int, seed: int) -> List[Operator]:
    """Drops densities whose extensive sums are linear combinations of the others on this ring."""
    if len(basis) < 1:
        return basis
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((RING_ZERO_VECTORS, 2 ** N))
    images = np.array([extensive_sum(ChargeDensity(op, shift_period), N).apply(v).ravel() for op in basis])
    norms = np.abs(images).max(axis=1)
    if np.all(norms <= RING_ZERO_TOL):
        logger.warning(f"Every density sums to zero on N={N}")
        return []
    _, R, piv = sla.qr(images.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RING_ZERO_TOL * diag[0]))
    keep = sorted(piv[:rank].tolist())
    if rank < len(basis):
        logger.info(f"Dropped {len(basis) - rank} densities that vanish on the N={N} ring")
    return [basis[i] for i in keep]


def find_commutant(U: Union[Operator, LocalSum], r: int, shift_period: int = 2, gauge: str = LEFT_ALIGNED,
                   seed: int = 0) -> List[ChargeDensity]:
    """
    Basis of range-r densities whose shift_period-invariant sums commute with U.
    Exact inputs give exact densities verified by random modular vectors; floating inputs
    give an orthonormal float basis.
    """
    if gauge not in GAUGES:
        raise ValueError(f"Unknown gauge {gauge!r}")
    B = as_local_sum(U)
    N = chain_length(B.dim, 2)
    if N % 2 or N < r + 2:
        raise ValueError(f"Commutant of range {r} needs an even ring with N >= {r + 2}, got N={N}")
    if N % shift_period:
        raise ValueError(f"Shift period {shift_period} does not divide N={N}")
    placements = [tuple(((s - 1 + k) % N) + 1 for k in range(r)) for s in range(1, N + 1, shift_period)]
    extra = _left_aligned_rows(r, shift_period) if gauge == LEFT_ALIGNED else None
    system = LocalCommutatorSystem(2, B.dim, placements, np.arange(4 ** r), [CommutatorEquation(B)], extra, seed)
    logger.info(f"Commutant search: range {r}, N={N}, {system.unknowns} unknowns, gauge={gauge}")

    A, _ = system.build(None)
    kernel = float_kernel(A)
    logger.info(f"Float kernel dimension {kernel.shape[0]}")
    if kernel.shape[0] == 0:
        return []

    if B.domain != EXACT:
        ops = [_density(vec, system.columns, r, REAL) for vec in kernel]
        ops = _drop_ring_zero(ops, N, shift_period, seed)
        return [ChargeDensity(op, shift_period, gauge) for op in ops]

    support = support_of(kernel)
    sub = system.restricted(support)
    exact = exact_kernel(sub, f"commutant r={r}")
    if len(exact) != kernel.shape[0]:
        logger.warning(f"Exact kernel has {len(exact)} vectors, float kernel {kernel.shape[0]}")
    ops = [_density(vec, sub.columns, r, EXACT) for vec in exact]
    ops = _drop_ring_zero(ops, N, shift_period, seed)

    verified = []
    for i, op in enumerate(ops):
        Q = extensive_sum(ChargeDensity(op, shift_period), N)
        if commutes_exactly(Q, B, seed=seed + i):
            verified.append(ChargeDensity(op, shift_period, gauge))
        else:
            logger.warning(f"Commutant element {i} failed the exact commutator check; dropped")
    logger.info(f"Commutant basis: {len(verified)} densities, "
                f"{sum(1 for q in verified if not q.is_diagonal())} non-diagonal")
    return verified


# ============================================================
# GENERATOR SELECTION
# ============================================================
def _hs(a: Operator, b: Operator):
    bv = {(r, c): v for r, c, v in b.entries()}
    return sum((v * bv[(r, c)] for r, c, v in a.entries() if (r, c) in bv), Fraction(0) if a.domain == EXACT else 0.0)


def select_generator(basis: List[ChargeDensity]) -> Optional[ChargeDensity]:
    """
    Sparsest non-diagonal element with its Hilbert-Schmidt overlap on the diagonal
    elements removed. None when the basis is entirely diagonal.
    """
    diagonal = [q.op for q in basis if q.is_diagonal()]
    candidates = sorted((q for q in basis if not q.is_diagonal()), key=lambda q: q.op.nnz)
    if not candidates:
        return None
    if len(candidates) > 1:
        logger.warning(f"{len(candidates)} non-diagonal densities; taking the sparsest")
    chosen = candidates[0]
    op = chosen.op
    if diagonal:
        op = _project_out(op, diagonal)
    return ChargeDensity(op, chosen.shift_period, chosen.gauge)


def _project_out(op: Operator, others: List[Operator]) -> Operator:
    k = len(others)
    if op.domain == EXACT:
        rows: List[Row] = [{j: _hs(others[i], others[j]) for j in range(k)} for i in range(k)]
        rows = [{j: v for j, v in row.items() if v} for row in rows]
        rhs = [_hs(others[i], op) for i in range(k)]
        sol = solve_rows(rows, k, rhs)
        if isinstance(sol, Infeasible):
            raise RuntimeError("Diagonal densities have a singular Gram matrix")
        coeffs = sol.particular
    else:
        G = np.array([[float(_hs(a, b)) for b in others] for a in others])
        coeffs = np.linalg.lstsq(G, np.array([float(_hs(a, op)) for a in others]), rcond=None)[0].tolist()
    for c, d in zip(coeffs, others):
        if c:
            op = op - d.scale(c)
    return op

import logging
from fractions import Fraction
from math import ceil
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

import numpy as np

from charges.schemas import CorrectionField, GluedDensity, InfeasibleSystemError
from charges.tower import q3_sum, ring_placements
from lax.schemas import LAX_DIM, LAX_LAYOUT, Key, LaxSeries
from lax.transfer import glued_length, shift_batch, transfer_apply
from linalg.chain import LocalSum
from linalg.modular import SAMPLE_PRIMES, SAMPLE_VECTORS, prime_stream
from linalg.operator import Operator, is_face_diagonal
from linalg.series import PowerSeries
from linalg.sketch import SKETCH_MARGIN, CommutatorEquation, LocalCommutatorSystem, pair_dots, solve_affine

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
SOLVE_RING = 8            # qubits
SUPPORT_POWER = 4
SIXTH = Fraction(1, 6)
HALF = Fraction(1, 2)

Density = Union[Operator, GluedDensity, CorrectionField]


def _op(x: Optional[Density]) -> Optional[Operator]:
    if x is None or isinstance(x, Operator):
        return x
    return x.op


# ============================================================
# LOW-ORDER EXPANSION
# ============================================================
def perturbative_lax(h: Density, h_tilde: Optional[Density] = None,
                     h_tilde_tilde: Optional[Density] = None) -> LaxSeries:
    """
    Checked Lax operator through u^3 from the glued generator and its corrections:
    1 + u h + u^2 (ht + h^2)/2 + u^3 (h^3 + h ht + 2 ht h - 2 htt)/6.
    Missing corrections are taken as zero.
    """
    h = _op(h)
    if h.layout != LAX_LAYOUT:
        raise ValueError(f"Expected a density on three glued sites, got layout {h.layout}")
    zero = Operator.zeros(LAX_LAYOUT, h.domain)
    ht = _op(h_tilde) or zero
    htt = _op(h_tilde_tilde) or zero
    one = Operator.identity(LAX_LAYOUT, h.domain)
    h2 = h @ h
    second = (ht + h2).scale(HALF)
    third = (h2 @ h + h @ ht + (ht @ h).scale(2) - htt.scale(2)).scale(SIXTH)
    support = lax_support(h, extra=[ht, htt])
    return LaxSeries(PowerSeries([one, h, second, third], 3), support)


def lax_support(h: Density, max_power: int = SUPPORT_POWER, extra: Iterable[Operator] = ()) -> FrozenSet[Key]:
    """Structural nonzero pattern of the identity and h^n, n <= max_power, plus any extra operators."""
    h = _op(h)
    mask = np.zeros((LAX_DIM, LAX_DIM), dtype=bool)
    for r, c, _ in h.entries():
        mask[r, c] = True
    power = np.eye(LAX_DIM, dtype=bool)
    total = power.copy()
    for _ in range(max_power):
        power = (power.astype(np.int64) @ mask.astype(np.int64)) > 0
        total |= power
    for op in extra:
        for r, c, _ in _op(op).entries():
            total[r, c] = True
    rows, cols = np.nonzero(total)
    return frozenset(zip(rows.tolist(), cols.tolist()))


# ============================================================
# ORDER-BY-ORDER SOLVE
# ============================================================
def _with_zero(coeffs: List[Operator], support: FrozenSet[Key]) -> LaxSeries:
    zero = Operator.zeros(LAX_LAYOUT)
    return LaxSeries(PowerSeries(coeffs + [zero], len(coeffs)), support)


def _known_term(partial: LaxSeries, Q3: LocalSum, N: int, n: int, drop: Sequence[int] = ()):
    """
    w^T T0^{-1} [K_n, Q3] v where K_n is the order-n transfer coefficient built from
    what partial already knows; orders in drop count as zero.
    """
    L = glued_length(N)
    Q3_t = Q3.transpose()

    def rhs(ws: np.ndarray, vs: np.ndarray, p: Optional[int]) -> np.ndarray:
        cache: Dict = {}
        shifted = shift_batch(ws, L, 2)
        q_v = Q3.apply(vs, p, cache)
        k_qv = transfer_apply(partial, q_v, N, n, p, drop=drop)[n]
        k_v = transfer_apply(partial, vs, N, n, p, drop=drop)[n]
        first = pair_dots(shifted, k_qv, p)
        second = pair_dots(Q3_t.apply(shifted, p, cache), k_v, p)
        return first - second if p is None else (first - second) % p

    return rhs


def solve_entries_order_by_order(support: Iterable[Key], h: Density, order_max: int,
                                 pinned: Optional[LaxSeries] = None, N: int = SOLVE_RING,
                                 seed: int = 0) -> LaxSeries:
    """
    Taylor coefficients of the checked Lax operator on the given support from
    [t(u), Q6] = 0 order by order. Order 1 is h; a pinned series fixes every order it
    carries. Free unknowns at each order are set to zero and counted.
    """
    h = _op(h)
    support = frozenset(support)
    L = glued_length(N)
    if L < 4:
        raise ValueError(f"Order-by-order solve needs N >= 8, got N={N}")
    bad = [k for k in support if (k[0] ^ k[1]) & 0b100001]
    if bad:
        raise ValueError(f"{len(bad)} support entries break the face structure")
    missing = h.pattern() - support
    if missing:
        raise ValueError(f"Support misses {len(missing)} nonzero entries of h")

    coeffs = [Operator.identity(LAX_LAYOUT), h]
    if pinned is not None:
        coeffs = [pinned.coefficient(k) for k in range(pinned.order + 1)]
    columns = np.array(sorted(r * LAX_DIM + c for r, c in support), dtype=np.int64)
    Q3 = q3_sum(GluedDensity(h), L)
    right = ceil((len(columns) + SKETCH_MARGIN) / 4 ** L)
    free: Dict[int, int] = {}

    for n in range(len(coeffs), order_max + 1):
        partial = _with_zero(coeffs, support)
        eq = CommutatorEquation(Q3, _known_term(partial, Q3, N, n, drop=(n,)), right_vectors=right)
        system = LocalCommutatorSystem(4, 4 ** L, ring_placements(L), columns, [eq], seed=seed + n)
        result = solve_affine(system, f"Lax order {n}")
        if result is None:
            raise InfeasibleSystemError(f"[t(u), Q6] = 0 has no solution at order {n} on this support")
        free[n] = len(columns) - len(result.pivots)
        if free[n]:
            logger.info(f"Order {n}: {free[n]} free parameters set to zero")
        entries = {(int(c) // LAX_DIM, int(c) % LAX_DIM): v for c, v in zip(columns, result.values) if v}
        coeff = Operator.from_entries(entries, LAX_LAYOUT)
        if not is_face_diagonal(coeff):
            raise RuntimeError(f"Order {n} coefficient left the face structure")
        coeffs.append(coeff)
        logger.info(f"Order {n}: {coeff.nnz} nonzero entries")
    return LaxSeries(PowerSeries(coeffs, len(coeffs) - 1), support, free)


def extend_open_entries(lax: LaxSeries, known: Dict[Key, PowerSeries], h: Density, order_max: int,
                        N: int = SOLVE_RING, seed: int = 0) -> LaxSeries:
    """
    Continues a solved series through order_max with the entries in known fixed to
    their given Taylor coefficients. Only the other support entries are unknowns of
    [t(u), Q6] = 0 at each new order; an inconsistent order means the fixed entries
    are wrong and raises InfeasibleSystemError.
    """
    h = _op(h)
    L = glued_length(N)
    open_keys = sorted(set(lax.support) - set(known))
    short = [k for k, s in known.items() if s.order < order_max]
    if short:
        raise ValueError(f"{len(short)} fixed entries are known only below order {order_max}")
    coeffs = [lax.coefficient(k) for k in range(lax.order + 1)]
    columns = np.array([r * LAX_DIM + c for r, c in open_keys], dtype=np.int64)
    Q3 = q3_sum(GluedDensity(h), L)
    right = ceil((len(columns) + SKETCH_MARGIN) / 4 ** L)
    logger.info(f"Extending {len(open_keys)} open entries from order {lax.order} to {order_max}")

    for n in range(lax.order + 1, order_max + 1):
        fixed = Operator.from_entries({k: s[n] for k, s in known.items() if s[n]}, LAX_LAYOUT)
        if not open_keys:
            coeffs.append(fixed)
            continue
        partial = LaxSeries(PowerSeries(coeffs + [fixed], n), lax.support)
        eq = CommutatorEquation(Q3, _known_term(partial, Q3, N, n), right_vectors=right)
        system = LocalCommutatorSystem(4, 4 ** L, ring_placements(L), columns, [eq], seed=seed + n)
        result = solve_affine(system, f"Lax order {n}, open entries")
        if result is None:
            raise InfeasibleSystemError(f"Fixed entries contradict [t(u), Q6] = 0 at order {n}")
        entries = {(int(c) // LAX_DIM, int(c) % LAX_DIM): v for c, v in zip(columns, result.values) if v}
        coeffs.append(fixed + Operator.from_entries(entries, LAX_LAYOUT))
    return LaxSeries(PowerSeries(coeffs, len(coeffs) - 1), lax.support, dict(lax.free_parameters))


def commutes_through_order(lax: LaxSeries, target: LocalSum, N: int, order: Optional[int] = None,
                           seed: int = 0) -> Dict[int, bool]:
    """Modular check of [t_n, target] = 0 for every Taylor order n of the transfer matrix."""
    order = lax.order if order is None else order
    rng = np.random.default_rng(seed)
    ok = {n: True for n in range(order + 1)}
    stream = prime_stream(skip=7)
    for _ in range(SAMPLE_PRIMES):
        p = next(stream)
        v = rng.integers(0, p, size=(SAMPLE_VECTORS, target.dim), dtype=np.int64)
        cache: Dict = {}
        tv = transfer_apply(lax, v, N, order, p)
        t_qv = transfer_apply(lax, target.apply(v, p, cache), N, order, p)
        for n in range(order + 1):
            if np.any((t_qv[n] - target.apply(tv[n], p, cache)) % p):
                ok[n] = False
    failed = [n for n, v in ok.items() if not v]
    if failed:
        logger.warning(f"Transfer coefficients at orders {failed} do not commute at N={N}")
    return ok

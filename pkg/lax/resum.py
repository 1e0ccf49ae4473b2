import logging
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

from sympy import Poly

from lax.perturbative import Density, extend_open_entries
from lax.schemas import (ALGEBRAIC, PADE, POLYNOMIAL, RATIO, SERIES, TRANSFER, Key, LaxEntry, LaxEntryTable,
                         LaxSeries)
from linalg.series import U, PadeFailure, PowerSeries, RationalFunction, algebraic_approximant, pade
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
MIN_ORDER = 12
SPARE = 3
MAX_POLY_DEGREE = 4
PADE_GRID = [(m, n) for m in range(5) for n in (1, 2)]
RATIO_GRID = [(m, n) for m in range(3) for n in range(3)]
TRANSFER_GRID = [(m, n) for m in range(9) for n in range(5)]
ALGEBRAIC_DEGREES = (1, 2, 3, 4)
EXTEND_ORDERS = 8

Pair = Tuple[Poly, Poly]


def _by_size(grid: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    return sorted(grid, key=lambda mn: (mn[0] + mn[1], mn[1]))


def valuation(s: PowerSeries) -> Optional[int]:
    return next((k for k, c in enumerate(s.coefficients) if c), None)


def _shift(s: PowerSeries, k: int) -> PowerSeries:
    return PowerSeries(s.coefficients[k:], s.order - k)


def _matches(form, s: PowerSeries) -> bool:
    try:
        return form.taylor(s.order) == s
    except (ValueError, ZeroDivisionError):
        return False


def _rational_fit(s: PowerSeries, grid: Sequence[Tuple[int, int]]) -> Optional[RationalFunction]:
    """Smallest rational function on the grid reproducing every known coefficient, with SPARE to spare."""
    for m, n in _by_size(grid):
        if s.order < m + n + SPARE:
            continue
        rf = pade(s, m, n)
        if isinstance(rf, PadeFailure):
            continue
        if _matches(rf, s):
            return rf
    return None


# ============================================================
# STRATEGIES
# ============================================================
def close_polynomial(s: PowerSeries) -> Optional[Poly]:
    for d in range(MAX_POLY_DEGREE + 1):
        if s.order >= d + 1 + SPARE and s.is_polynomial(d):
            return pade(s, d, 0).numerator
    return None


def close_pade(s: PowerSeries, grid: Sequence[Tuple[int, int]] = PADE_GRID) -> Optional[RationalFunction]:
    return _rational_fit(s, grid)


def close_ratio(s: PowerSeries, base: RationalFunction, base_series: PowerSeries,
                grid: Sequence[Tuple[int, int]] = RATIO_GRID) -> Optional[Tuple[RationalFunction, RationalFunction]]:
    """(ratio, closed form) with entry = ratio * base, or None."""
    vb, ve = valuation(base_series), valuation(s)
    if vb is None or ve is None or vb > ve:
        return None
    top, bottom = _shift(s, vb), _shift(base_series, vb)
    ratio = _rational_fit(top * bottom.inverse(), grid)
    if ratio is None:
        return None
    form = RationalFunction(ratio.numerator * base.numerator, ratio.denominator * base.denominator)
    return (ratio, form) if _matches(form, s) else None


def close_algebraic(s: PowerSeries, degrees: Sequence[int] = ALGEBRAIC_DEGREES):
    for d in degrees:
        if s.order < 3 * (d + 1) - 1 + SPARE:
            continue
        entry = algebraic_approximant(s, d)
        if not isinstance(entry, PadeFailure):
            return entry
    return None


# ============================================================
# TRANSFER-MATRIX MATCHING ON TINY RINGS
# ============================================================
def transfer_terms(keys: Sequence[Key], L: int) -> Dict[Tuple[int, int], List[Tuple[Key, ...]]]:
    """
    Entries of t(u) on a ring of L glued sites (L = 1 or 2) as sums of products of
    checked Lax entries, restricted to products of nonzero entries.
    """
    present = set(keys)
    terms: Dict[Tuple[int, int], List[Tuple[Key, ...]]] = {}
    if L == 1:
        for y in range(4):
            for x in range(4):
                row = []
                for ab in range(16):
                    key = (y * 16 + ab, ab * 4 + x)
                    if key in present:
                        row.append((key,))
                if row:
                    terms[(y, x)] = row
        return terms
    if L != 2:
        raise ValueError(f"Transfer matching only runs on rings of one or two glued sites, got {L}")
    for y1 in range(4):
        for y2 in range(4):
            for x1 in range(4):
                for x2 in range(4):
                    row = []
                    for ab in range(16):
                        for bc in range(16):
                            k1 = (y1 * 16 + bc, ab * 4 + x1)
                            k2 = (y2 * 16 + ab, bc * 4 + x2)
                            if k1 in present and k2 in present:
                                row.append((k1, k2))
                    if row:
                        terms[(y1 * 4 + y2, x1 * 4 + x2)] = row
    return terms


def _one() -> Pair:
    return Poly(1, U, domain="QQ"), Poly(1, U, domain="QQ")


def _times(a: Pair, b: Pair) -> Pair:
    return a[0] * b[0], a[1] * b[1]


def _plus(a: Pair, b: Optional[Pair]) -> Pair:
    if b is None:
        return a
    return a[0] * b[1] + b[0] * a[1], a[1] * b[1]


def close_by_transfer(target: Key, products: List[Tuple[Key, ...]], series: Dict[Key, PowerSeries],
                      closed: Dict[Key, RationalFunction]) -> Optional[RationalFunction]:
    """
    Solves one transfer entry T = A f + B for the single unresolved entry f, with T
    resummed from its series and A, B built from closed entries.
    """
    order = series[target].order
    total = None
    A: Optional[Pair] = None
    B: Optional[Pair] = None
    for product in products:
        hits = sum(1 for k in product if k == target)
        if hits > 1 or any(k != target and k not in closed for k in product):
            return None
        term = None
        for k in product:
            s = series[k]
            term = s if term is None else term * s
        total = term if total is None else total + term
        rest = _one()
        for k in product:
            if k != target:
                rf = closed[k]
                rest = _times(rest, (rf.numerator, rf.denominator))
        if hits:
            A = _plus(rest, A)
        else:
            B = _plus(rest, B)
    if A is None or A[0].is_zero:
        return None
    T = _rational_fit(total.truncate(order), TRANSFER_GRID)
    if T is None:
        return None
    Tn, Td = T.numerator, T.denominator
    if B is not None:
        Tn, Td = Tn * B[1] - B[0] * Td, Td * B[1]
    try:
        form = RationalFunction(Tn * A[1], Td * A[0])
    except ZeroDivisionError:
        return None
    if form.singular_at_origin or not _matches(form, series[target]):
        return None
    return form


# ============================================================
# DRIVER
# ============================================================
def _close_rational(series: Dict[Key, PowerSeries], entries: Dict[Key, LaxEntry], names: Dict[Key, str],
                    terms: Dict[int, Dict]) -> None:
    """Polynomial and Pade closures, then ratios and transfer matching until nothing moves."""
    for k, s in series.items():
        if k in entries:
            continue
        poly = close_polynomial(s)
        if poly is not None:
            entries[k] = LaxEntry(k, names[k], POLYNOMIAL, s, poly)
            continue
        rf = close_pade(s)
        if rf is not None:
            entries[k] = LaxEntry(k, names[k], PADE, s, rf)

    progress = True
    while progress:
        progress = False
        closed = {k: e.rational() for k, e in entries.items() if e.rational() is not None}
        for k, s in series.items():
            if k in entries:
                continue
            for bk in sorted(closed, key=lambda b: names[b]):
                fit = close_ratio(s, closed[bk], series[bk])
                if fit is not None:
                    ratio, form = fit
                    entries[k] = LaxEntry(k, names[k], RATIO, s, form, base=names[bk], ratio=ratio)
                    closed[k] = form
                    progress = True
                    break
        for products_by_entry in terms.values():
            for products in products_by_entry.values():
                open_keys = {key for product in products for key in product if key not in entries}
                if len(open_keys) != 1:
                    continue
                target = open_keys.pop()
                form = close_by_transfer(target, products, series, closed)
                if form is not None:
                    entries[target] = LaxEntry(target, names[target], TRANSFER, series[target], form)
                    closed[target] = form
                    progress = True


def resum_entries(lax: LaxSeries, order_solved: Optional[int] = None, weights: Optional[FaceWeights] = None,
                  transfer_rings: Sequence[int] = (1, 2), h: Optional[Density] = None,
                  extend_by: int = EXTEND_ORDERS, seed: int = 0) -> LaxEntryTable:
    """
    Closes every nonzero entry of a solved Lax series: polynomials, Pade forms,
    ratios to closed entries, transfer-matrix matching and square-root forms, in
    that order. With the glued generator h given, entries still open after the
    rational closures are solved further from [t(u), Q6] = 0 with every closed entry
    substituted, and the closures are retried on the longer series. Entries
    resisting all of them stay as truncated series.
    """
    order = lax.order if order_solved is None else order_solved
    if order < MIN_ORDER:
        logger.warning(f"Resumming from order {order}; closures below order {MIN_ORDER} are fragile")
    series = {k: lax.entry_series(k).truncate(order) for k in sorted(lax.support)}
    series = {k: s for k, s in series.items() if valuation(s) is not None}
    names = {k: f"f{i + 1}" for i, k in enumerate(series)}
    entries: Dict[Key, LaxEntry] = {}
    terms = {L: transfer_terms(list(series), L) for L in transfer_rings}

    _close_rational(series, entries, names, terms)
    logger.info(f"{len(entries)} of {len(series)} entries closed in rational form from order {order}")

    if h is not None and extend_by > 0 and len(entries) < len(series):
        longer = order + extend_by
        known = {k: e.taylor(longer) for k, e in entries.items()}
        start = LaxSeries(lax.series.truncate(order), lax.support, dict(lax.free_parameters))
        extended = extend_open_entries(start, known, h, longer, seed=seed)
        series = {k: extended.entry_series(k) for k in series}
        woken = [k for k in lax.support if k not in series and valuation(extended.entry_series(k)) is not None]
        if woken:
            logger.warning(f"{len(woken)} entries zero through order {order} turn nonzero later; left out")
        entries = {k: replace(e, series=series[k]) for k, e in entries.items()}
        before = len(entries)
        _close_rational(series, entries, names, terms)
        order = longer
        logger.info(f"{len(entries) - before} more entries closed after solving through order {order}")

    for k, s in series.items():
        if k in entries:
            continue
        alg = close_algebraic(s)
        if alg is not None:
            entries[k] = LaxEntry(k, names[k], ALGEBRAIC, s, alg)
        else:
            entries[k] = LaxEntry(k, names[k], SERIES, s)

    table = LaxEntryTable(weights, dict(sorted(entries.items())), order)
    counts = table.counts()
    logger.info(f"Resummed {len(entries)} entries: {counts}")
    if counts[SERIES]:
        logger.warning(f"{counts[SERIES]} entries stay unresolved; checks run through order {order} only")
    return table

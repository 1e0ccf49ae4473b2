import logging
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np

from lax.schemas import LAX_DIM, LAX_LAYOUT, LaxEntryTable, LaxSeries, TransferSeries
from linalg.modular import mod_matmul, prime_stream, reconstruct
from linalg.operator import Operator
from linalg.parallel import parallel_map
from linalg.scalars import EXACT, REAL
from linalg.series import PowerSeries

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
AUX = 16
CHUNK = 8
PATTERN_PRIMES = 2

Coefficients = List[Optional[np.ndarray]]


def glued_length(N: int) -> int:
    if N % 2 or N < 2:
        raise ValueError(f"Transfer matrices need an even number of qubits, got N={N}")
    return N // 2


# ============================================================
# PLAIN AND CHECKED FORMS
# ============================================================
def routing() -> Operator:
    """P_aj P_bj on (a, b, j): the content of a moves to j, b to a, j to b."""
    entries = {}
    for a in range(4):
        for b in range(4):
            for j in range(4):
                entries[(b * 16 + j * 4 + a, a * 16 + b * 4 + j)] = Fraction(1)
    return Operator.from_entries(entries, LAX_LAYOUT)


def checked_to_lax(checked: Operator) -> Operator:
    return routing() @ checked


def lax_to_checked(lax: Operator) -> Operator:
    return routing().transpose() @ lax


# ============================================================
# PROPAGATION THROUGH THE AUXILIARY PAIR
# ============================================================
def lax_coefficients(lax: LaxSeries, order: int, p: Optional[int] = None) -> Coefficients:
    """Transposed dense coefficients (float or mod p); None marks a zero coefficient."""
    out: Coefficients = []
    for k in range(order + 1):
        c = lax.coefficient(k)
        if c.is_zero():
            out.append(None)
        elif p is None:
            out.append(np.ascontiguousarray(c.to_float().T))
        else:
            out.append(np.ascontiguousarray(c.to_modular(p).T))
    return out


def _split(state: np.ndarray, L: int, j: int) -> np.ndarray:
    B = state.shape[0]
    left, right = 4 ** (j - 1), 4 ** (L - j)
    t = state.reshape(B, 4, 4, left, 4, right).transpose(0, 3, 5, 1, 2, 4)
    return t.reshape(B * left * right, LAX_DIM)


def _merge(flat: np.ndarray, B: int, L: int, j: int) -> np.ndarray:
    left, right = 4 ** (j - 1), 4 ** (L - j)
    t = flat.reshape(B, left, right, 4, 4, 4).transpose(0, 4, 5, 1, 3, 2)
    return t.reshape(B, 4, 4, 4 ** L)


def _step(states: List[Optional[np.ndarray]], coeffs: Coefficients, L: int, j: int,
          p: Optional[int]) -> List[Optional[np.ndarray]]:
    """One Lax factor on (a, b, j) followed by the routing, order by order."""
    B = next(s for s in states if s is not None).shape[0]
    flats = [None if s is None else _split(s, L, j) for s in states]
    out: List[Optional[np.ndarray]] = []
    for n in range(len(states)):
        acc = None
        for k in range(n + 1):
            c, f = coeffs[k], flats[n - k]
            if c is None or f is None:
                continue
            term = f @ c if p is None else mod_matmul(f, c, p)
            if acc is None:
                acc = term
            else:
                acc = acc + term if p is None else (acc + term) % p
        out.append(None if acc is None else _merge(acc, B, L, j))
    return out


def propagate(coeffs: Coefficients, vecs: np.ndarray, L: int, order: int,
              p: Optional[int] = None) -> List[np.ndarray]:
    """Rows of the result at index n are t_n applied to the rows of vecs."""
    B = vecs.shape[0]
    dtype = np.float64 if p is None else np.int64
    start = np.zeros((B, AUX, AUX, 4 ** L), dtype=dtype)
    src = vecs.astype(dtype) if p is None else vecs.astype(np.int64) % p
    for s in range(AUX):
        start[:, s, s, :] = src
    states: List[Optional[np.ndarray]] = [start.reshape(B * AUX, 4, 4, 4 ** L)] + [None] * order
    for j in range(1, L + 1):
        states = _step(states, coeffs, L, j, p)
    out = []
    for st in states:
        if st is None:
            out.append(np.zeros((B, 4 ** L), dtype=dtype))
            continue
        traced = np.trace(st.reshape(B, AUX, AUX, 4 ** L), axis1=1, axis2=2)
        out.append(traced if p is None else traced % p)
    return out


def _chunked(coeffs: Coefficients, vecs: np.ndarray, L: int, order: int, p: Optional[int]) -> List[np.ndarray]:
    starts = list(range(0, len(vecs), CHUNK))
    pieces = parallel_map(lambda s: propagate(coeffs, vecs[s:s + CHUNK], L, order, p), starts)
    return [np.vstack([pc[n] for pc in pieces]) for n in range(order + 1)]


def transfer_apply(lax: LaxSeries, vecs: np.ndarray, N: int, order: Optional[int] = None,
                   p: Optional[int] = None, drop: Sequence[int] = ()) -> List[np.ndarray]:
    """
    Taylor coefficients of t(u) applied to a batch of vectors. Orders listed in
    drop are treated as zero coefficients of the Lax series.
    """
    L = glued_length(N)
    order = lax.order if order is None else order
    if order > lax.order:
        raise ValueError(f"Lax series known through order {lax.order}, asked for {order}")
    coeffs = lax_coefficients(lax, order, p)
    for k in drop:
        if k <= order:
            coeffs[k] = None
    return _chunked(coeffs, vecs, L, order, p)


def transfer_apply_point(checked: np.ndarray, vecs: np.ndarray, N: int, p: Optional[int] = None) -> np.ndarray:
    """t at a fixed spectral point, given the dense checked Lax matrix there."""
    L = glued_length(N)
    c = np.ascontiguousarray(checked.T if p is None else checked.T % p)
    return _chunked([c], vecs, L, 0, p)[0]


def shift_batch(batch: np.ndarray, L: int, step: int) -> np.ndarray:
    """Applies the glued cyclic shift by step sites to every row."""
    B = batch.shape[0]
    t = batch.reshape((B,) + (4,) * L)
    t = np.transpose(t, [0] + [((k - 1 - step) % L) + 1 for k in range(1, L + 1)])
    return t.reshape(B, 4 ** L)


# ============================================================
# FULL TRANSFER MATRICES
# ============================================================
def _exact_matrices(fn, dim: int, count: int, label: str) -> List[Operator]:
    """Lifts `count` dim x dim matrices known only mod p; fn(p) -> (count, dim, dim) residues."""
    images = []
    stream = prime_stream(skip=11)
    for _ in range(PATTERN_PRIMES):
        images.append(fn(next(stream)))
    mask = np.any(np.stack(images) != 0, axis=0).ravel()
    where = np.flatnonzero(mask)
    logger.info(f"{label}: lifting {len(where)} nonzero entries")
    result = reconstruct(lambda p: (fn(p).ravel()[where], []), label)
    values = [] if result is None else result.values
    per = dim * dim
    entries: List[dict] = [{} for _ in range(count)]
    for idx, v in zip(where.tolist(), values):
        if v:
            n, rc = divmod(idx, per)
            entries[n][divmod(rc, dim)] = v
    return [Operator.from_entries(e, (2,) * int(round(np.log2(dim)))) for e in entries]


def transfer_series(lax: LaxSeries, N: int, order: Optional[int] = None, domain: str = EXACT) -> TransferSeries:
    """t(u) through the given order as full 2^N x 2^N operators; only sensible on short rings."""
    L = glued_length(N)
    order = lax.order if order is None else order
    if order > lax.order:
        raise ValueError(f"Lax series known through order {lax.order}, asked for {order}")
    dim = 4 ** L
    basis = np.eye(dim, dtype=np.int64)
    logger.info(f"Transfer series N={N} through order {order}, domain {domain}")
    if domain == EXACT:
        def fn(p: int) -> np.ndarray:
            return np.stack([m.T for m in transfer_apply(lax, basis, N, order, p)])

        coeffs = _exact_matrices(fn, dim, order + 1, f"transfer N={N}")
    else:
        coeffs = []
        for m in transfer_apply(lax, basis.astype(np.float64), N, order):
            rows, cols = np.nonzero(m.T)
            vals = m.T[rows, cols]
            coeffs.append(Operator.from_entries(dict(zip(zip(rows.tolist(), cols.tolist()), vals.tolist())),
                                                (2,) * N, REAL))
    return TransferSeries(PowerSeries(coeffs, order), N)


def transfer_at_point(checked: Operator, N: int) -> Operator:
    """t at one spectral point from the checked Lax matrix there; exact input gives an exact result."""
    L = glued_length(N)
    dim = 4 ** L
    basis = np.eye(dim, dtype=np.int64)
    if checked.domain == EXACT:
        def fn(p: int) -> np.ndarray:
            return transfer_apply_point(checked.to_modular(p), basis, N, p).T[None]

        return _exact_matrices(fn, dim, 1, f"transfer point N={N}")[0]
    m = transfer_apply_point(checked.to_float(), basis.astype(np.float64), N).T
    rows, cols = np.nonzero(m)
    return Operator.from_entries(dict(zip(zip(rows.tolist(), cols.tolist()), m[rows, cols].tolist())),
                                 (2,) * N, REAL)


def transfer_from_lax(lax: Union[LaxSeries, LaxEntryTable], N: int, order: Optional[int] = None,
                      point=None, domain: str = EXACT) -> Union[TransferSeries, Operator]:
    """Series output for a series input, a single operator when a spectral point is given."""
    if N < 6:
        logger.warning(f"N={N} is below the shortest faithful ring (N=6)")
    if point is None:
        series = lax.series(order) if isinstance(lax, LaxEntryTable) else lax
        return transfer_series(series, N, order, domain)
    if isinstance(lax, LaxEntryTable):
        matrix = lax.matrix_at(point if domain == EXACT else float(point))
    else:
        value = lax.evaluate(Fraction(point) if domain == EXACT else float(point))
        matrix = value if domain == EXACT else value.astype(REAL)
    return transfer_at_point(matrix, N)


def log_derivative_charges(t: TransferSeries) -> List[Operator]:
    """The first two coefficients of t^{-1} t': the glued Q6 sum and the next charge."""
    if t.order < 2:
        raise ValueError(f"Two charges need the transfer series through order 2, got {t.order}")
    ls = t.series.log_derivative()
    return [ls[0], ls[1]]

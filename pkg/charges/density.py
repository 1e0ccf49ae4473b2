import logging
from fractions import Fraction
from typing import Dict, List, Union

import numpy as np

from charges.schemas import LEFT_ALIGNED, NO_GAUGE, ChargeDensity, GluedDensity, InfeasibleSystemError
from linalg.chain import LocalSum, translation_sum
from linalg.exact import Infeasible, Row, solve_rows
from linalg.operator import Operator, embed, face_mask, kron, partial_trace, permute_sites
from linalg.scalars import EXACT

logger = logging.getLogger(__name__)


# ============================================================
# LEFT-ALIGNED GAUGE
# ============================================================
def _leading_trace(op: Operator, lead: int) -> Operator:
    """Normalized partial trace over the first `lead` sites."""
    width = int(np.prod(op.layout[:lead]))
    return partial_trace(op, range(1, lead + 1)).scale(Fraction(1, width) if op.domain == EXACT else 1.0 / width)


def is_left_aligned(q: ChargeDensity) -> bool:
    tol = 0.0 if q.op.domain == EXACT else 1e-12
    return partial_trace(q.op, range(1, q.shift_period + 1)).is_zero(tol)


def left_align(q: ChargeDensity) -> ChargeDensity:
    """
    Moves every term that is the identity on the first shift period of sites one
    period to the left, which leaves the extensive charge unchanged. The identity
    component itself cannot be moved and is dropped.
    """
    op = q.op
    s = q.shift_period
    if op.sites <= s:
        raise ValueError(f"Range {op.sites} leaves nothing to align with shift period {s}")
    exact = op.domain == EXACT
    tol = 0.0 if exact else 1e-12
    c = op.trace() / op.dim
    if c:
        op = op - Operator.identity(op.layout, op.domain).scale(c)
    lead_id = Operator.identity(op.layout[:s], op.domain)
    tail_id = Operator.identity(op.layout[-s:], op.domain)
    for _ in range(op.sites + 1):
        t = _leading_trace(op, s)
        if t.is_zero(tol):
            return ChargeDensity(op, s, LEFT_ALIGNED)
        op = op - kron(lead_id, t) + kron(t, tail_id)
    raise RuntimeError(f"Left alignment did not settle for a range-{op.sites} density")


# ============================================================
# GLUING
# ============================================================
def glue(density: Union[ChargeDensity, GluedDensity], times: int = 1) -> GluedDensity:
    """Reinterprets pairs of sites as one site; a pure reshape of the matrix."""
    if times not in (1, 2):
        raise ValueError(f"Gluing is defined once or twice, got times={times}")
    if isinstance(density, ChargeDensity):
        op = density.op
        if density.shift_period != 2 or op.sites % 2 or any(d != 2 for d in op.layout):
            raise ValueError(f"Cannot glue range {op.sites} with shift period {density.shift_period}")
        glued = GluedDensity(Operator(op.data, (4,) * (op.sites // 2), op.domain), 1)
    else:
        glued = density
    while glued.times < times:
        glued = _glue_again(glued)
    return glued


def _glue_again(g: GluedDensity) -> GluedDensity:
    """eta on pairs of C^4 sites: g placed at both starts of the pair, then reshaped to C^16."""
    if g.local_dim != 4:
        raise ValueError(f"Second gluing expects C^4 sites, got local dimension {g.local_dim}")
    one = Operator.identity((4,), g.op.domain)
    eta = kron(g.op, one) + kron(one, g.op)
    if eta.sites % 2:
        eta = kron(eta, one)
    return GluedDensity(Operator(eta.data, (16,) * (eta.sites // 2), eta.domain), 2)


def unglue(g: GluedDensity) -> ChargeDensity:
    qubits = g.op.sites * (2 if g.times == 1 else 4)
    return ChargeDensity(Operator(g.op.data, (2,) * qubits, g.op.domain), 2 * g.times, NO_GAUGE)


def as_qubits(op: Operator) -> Operator:
    """Relabels a C^4 (or C^16) chain operator as a qubit operator with the same matrix."""
    qubits = int(round(np.log2(op.dim)))
    return Operator(op.data, (2,) * qubits, op.domain)


# ============================================================
# REFLECTION AND EXTENSIVE SUMS
# ============================================================
def reflect_density(q: ChargeDensity) -> ChargeDensity:
    """Site reflection; even ranges get one leading identity so the sublattice parity is kept."""
    r = q.range
    op = permute_sites(q.op, list(range(r, 0, -1)))
    if r % 2 == 0:
        op = kron(Operator.identity((q.op.layout[0],), op.domain), op)
    return left_align(ChargeDensity(op, q.shift_period, NO_GAUGE))


def extensive_operator(q: ChargeDensity, N: int) -> Operator:
    if N % q.shift_period:
        raise ValueError(f"Shift period {q.shift_period} does not divide N={N}")
    if q.range > N:
        raise ValueError(f"Range {q.range} does not fit N={N}")
    total = None
    for start in range(1, N + 1, q.shift_period):
        term = embed(q.op, start, N)
        total = term if total is None else total + term
    return total


def extensive_sum(q: ChargeDensity, N: int) -> LocalSum:
    return translation_sum(q.op, N, q.shift_period)


# ============================================================
# FACE GAUGE
# ============================================================
def to_face_gauge(h: GluedDensity) -> GluedDensity:
    """
    Adds a glued divergence a(x)1 - 1(x)a, with a on two C^4 sites, so that the
    density becomes diagonal in its first and last qubit. The charge is unchanged.
    """
    op = h.op
    if h.local_dim != 4 or op.sites != 3:
        raise ValueError(f"Face gauge expects a range-3 C^4 density, got layout {op.layout}")
    if op.domain != EXACT:
        return _float_face_gauge(h)
    allowed = face_mask(op.dim)
    values: Dict = {(r, c): v for r, c, v in op.entries()}
    rows: List[Row] = []
    rhs: List[Fraction] = []
    for r in range(64):
        for c in range(64):
            if allowed[r, c]:
                continue
            row = _divergence_row(r, c)
            value = values.get((r, c), Fraction(0))
            if not row:
                if value:
                    raise InfeasibleSystemError(f"Entry ({r},{c}) cannot be removed by a divergence")
                continue
            rows.append(row)
            rhs.append(-value)
    solution = solve_rows(rows, 256, rhs)
    if isinstance(solution, Infeasible):
        raise InfeasibleSystemError("No glued divergence makes the density face-diagonal")
    a = Operator.from_entries({(i // 16, i % 16): v for i, v in enumerate(solution.particular) if v}, (4, 4))
    one = Operator.identity((4,))
    out = op + kron(a, one) - kron(one, a)
    logger.info(f"Face gauge: divergence with {a.nnz} entries, density nnz {op.nnz} -> {out.nnz}")
    return GluedDensity(out, h.times)


def _divergence_row(r: int, c: int) -> Row:
    g1, g2, g3 = r // 16, (r // 4) % 4, r % 4
    k1, k2, k3 = c // 16, (c // 4) % 4, c % 4
    row: Row = {}
    if g3 == k3:
        key = (g1 * 4 + g2) * 16 + (k1 * 4 + k2)
        row[key] = row.get(key, Fraction(0)) + 1
    if g1 == k1:
        key = (g2 * 4 + g3) * 16 + (k2 * 4 + k3)
        row[key] = row.get(key, Fraction(0)) - 1
    return {k: v for k, v in row.items() if v}


def _float_face_gauge(h: GluedDensity) -> GluedDensity:
    op = h.op
    dense = op.to_float()
    allowed = face_mask(op.dim)
    forbidden = np.argwhere(~allowed)
    A = np.zeros((len(forbidden), 256))
    for i, (r, c) in enumerate(forbidden):
        for key, v in _divergence_row(int(r), int(c)).items():
            A[i, key] = float(v)
    b = -dense[~allowed]
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.abs(A @ x - b).max(initial=0.0) > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        raise InfeasibleSystemError("No glued divergence makes the density face-diagonal")
    a = Operator.from_dense(x.reshape(16, 16).tolist(), (4, 4), op.domain)
    one = Operator.identity((4,), op.domain)
    return GluedDensity(op + kron(a, one) - kron(one, a), h.times)

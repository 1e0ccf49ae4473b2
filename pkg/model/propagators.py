import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List

import numpy as np

from linalg.chain import LocalSum, Placed
from linalg.operator import Operator, embed_sites, partial_trace, site_digits
from linalg.scalars import EXACT
from model.gates import (build_d_operator, build_face_gate, hopping_gate, injection_gate,
                         left_boundary_gate, right_boundary_gate)
from model.schemas import BoundaryDriving, FaceWeights, SixVertexSpec

logger = logging.getLogger(__name__)


@dataclass
class Propagator:
    even: Operator
    odd: Operator
    full: Operator


def _check_even(N: int, minimum: int = 4) -> None:
    if N % 2 or N < minimum:
        raise ValueError(f"Chain length must be even and at least {minimum}, got N={N}")


def _product(placed: List[Placed], N: int) -> Operator:
    layout = (2,) * N
    out = None
    for pl in placed:
        emb = embed_sites(pl.op, pl.sites, layout)
        out = emb if out is None else out @ emb
    return out


# ============================================================
# PERIODIC CHAIN
# ============================================================
def periodic_layers(w: FaceWeights, N: int):
    """Placed gates of the even-active and odd-active layers of a ring."""
    _check_even(N)
    gate = build_face_gate(w)

    def site(s: int) -> int:
        return (s - 1) % N + 1

    even = [Placed(gate, (site(s - 1), s, site(s + 1))) for s in range(2, N + 1, 2)]
    odd = [Placed(gate, (site(s - 1), s, site(s + 1))) for s in range(1, N, 2)]
    return even, odd


def build_periodic_propagator(w: FaceWeights, N: int) -> Propagator:
    even, odd = periodic_layers(w, N)
    u_even, u_odd = _product(even, N), _product(odd, N)
    logger.info(f"Periodic propagator N={N}: {len(even)}+{len(odd)} gates")
    return Propagator(u_even, u_odd, u_even @ u_odd)


def periodic_propagator_sum(w: FaceWeights, N: int) -> LocalSum:
    """The ring propagator as a gate product acting on vectors; no full matrix is formed."""
    even, odd = periodic_layers(w, N)
    return LocalSum.product(even + odd, 2 ** N)


# ============================================================
# OPEN, BOUNDARY-DRIVEN CHAIN
# ============================================================
def open_layers(w: FaceWeights, drv: BoundaryDriving, N: int):
    if not w.is_stochastic():
        raise ValueError(f"Open chains need stochastic bulk weights, got {w}")
    drv.validate()
    _check_even(N)
    gate = build_face_gate(w)
    even = [Placed(gate, (s - 1, s, s + 1)) for s in range(2, N - 1, 2)]
    even.append(Placed(right_boundary_gate(drv), (N - 1, N)))
    odd = [Placed(left_boundary_gate(drv), (1, 2))]
    odd += [Placed(gate, (s - 1, s, s + 1)) for s in range(3, N, 2)]
    return even, odd


def build_open_propagator(w: FaceWeights, drv: BoundaryDriving, N: int) -> Propagator:
    even, odd = open_layers(w, drv, N)
    u_even, u_odd = _product(even, N), _product(odd, N)
    logger.info(f"Open propagator N={N}")
    return Propagator(u_even, u_odd, u_odd @ u_even)


# ============================================================
# SIX-VERTEX COMPARISON MODEL
# ============================================================
def six_vertex_layers(s: SixVertexSpec):
    M = s.sites
    even = [Placed(injection_gate(s.a, s.b), (1,))]
    even += [Placed(hopping_gate(s.p), (k, k + 1)) for k in range(2, M, 2)]
    odd = [Placed(hopping_gate(s.q), (k, k + 1)) for k in range(1, M - 1, 2)]
    odd.append(Placed(injection_gate(s.c, s.d), (M,)))
    return even, odd


def build_six_vertex_propagator(s: SixVertexSpec) -> Propagator:
    even, odd = six_vertex_layers(s)
    u_even, u_odd = _product(even, s.sites), _product(odd, s.sites)
    return Propagator(u_even, u_odd, u_even @ u_odd)


# ============================================================
# DIAGONAL CHARGE
# ============================================================
def soliton_current_charge(N: int) -> Operator:
    """sum_j Z_{2j-1} Z_{2j} - Z_{2j} Z_{2j+1} on a ring; Z|0> = |0>."""
    _check_even(N, minimum=2)
    z = 1 - 2 * site_digits((2,) * N)
    total = np.zeros(2 ** N, dtype=np.int64)
    for j in range(1, N // 2 + 1):
        a, b, c = 2 * j - 2, 2 * j - 1, (2 * j) % N
        total += z[a] * z[b] - z[b] * z[c]
    entries = {(i, i): Fraction(int(v)) for i, v in enumerate(total) if v}
    return Operator.from_entries(entries, (2,) * N, EXACT)


# ============================================================
# GLUED PICTURE
# ============================================================
def glued_shift(L: int, step: int = 1, domain: str = EXACT) -> Operator:
    """Cyclic translation of L glued C^4 sites: site k receives the content of site k-step."""
    digits = site_digits((4,) * L)
    moved = np.roll(digits, step, axis=0)
    out_index = np.ravel_multi_index(tuple(moved), (4,) * L)
    entries = {(int(o), int(i)): Fraction(1) for i, o in enumerate(out_index)}
    op = Operator.from_entries(entries, (4,) * L, EXACT)
    return op if domain == EXACT else op.astype(domain)


def propagator_from_d_chain(w: FaceWeights, N: int) -> Operator:
    """
    Rebuilds the ring propagator as a glued translation times the auxiliary-space
    trace of the staircase of D operators.
    """
    _check_even(N)
    L = N // 2
    d = build_d_operator(w)
    layout = (4,) * (L + 1)
    chain = None
    for j in range(1, L + 1):
        emb = embed_sites(d, [1, j + 1], layout)
        chain = emb if chain is None else emb @ chain
    traced = partial_trace(chain, [1])
    out = glued_shift(L, -1, traced.domain) @ traced
    return Operator(out.data, (2,) * N, out.domain)

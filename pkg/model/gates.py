import logging
from fractions import Fraction
from typing import Dict, Tuple

from linalg.operator import Operator, embed_sites
from linalg.scalars import EXACT, domain_of, widest_domain
from model.schemas import BoundaryDriving, FaceWeights

logger = logging.getLogger(__name__)


def _weights_domain(w: FaceWeights) -> str:
    return widest_domain(*(domain_of(v) for v in w.as_tuple()))


def build_face_gate(w: FaceWeights) -> Operator:
    """
    Three-site control-control gate on |k, i, l>, site 1 most significant.
    The middle site maps |j> -> sum_i f_kl[i][j] |i>; outer sites are untouched.
    """
    entries: Dict[Tuple[int, int], object] = {}
    for k in (0, 1):
        for l in (0, 1):
            f = w.face_matrix(k, l)
            for i in (0, 1):
                for j in (0, 1):
                    if f[i][j]:
                        entries[(4 * k + 2 * i + l, 4 * k + 2 * j + l)] = f[i][j]
    return Operator.from_entries(entries, (2, 2, 2), _weights_domain(w))


def left_boundary_gate(drv: BoundaryDriving) -> Operator:
    """Updates site 1 conditioned on site 2."""
    a, b = drv.a, drv.b
    rows = [
        [a, 0, a, 0],
        [0, b, 0, b],
        [1 - a, 0, 1 - a, 0],
        [0, 1 - b, 0, 1 - b],
    ]
    return Operator.from_dense([[Fraction(v) for v in r] for r in rows], (2, 2), EXACT)


def right_boundary_gate(drv: BoundaryDriving) -> Operator:
    """Updates site N conditioned on site N-1."""
    c, d = drv.c, drv.d
    rows = [
        [c, c, 0, 0],
        [1 - c, 1 - c, 0, 0],
        [0, 0, d, d],
        [0, 0, 1 - d, 1 - d],
    ]
    return Operator.from_dense([[Fraction(v) for v in r] for r in rows], (2, 2), EXACT)


# ============================================================
# SIX-VERTEX COMPARISON MODEL
# ============================================================
def hopping_gate(r: Fraction) -> Operator:
    """1/(1+r) * identity + r/(1+r) * SWAP on two sites."""
    r = Fraction(r)
    if r < 0:
        raise ValueError(f"Hopping parameter must be non-negative, got {r}")
    stay, swap = 1 / (1 + r), r / (1 + r)
    entries = {(0, 0): Fraction(1), (3, 3): Fraction(1)}
    entries[(1, 1)] = stay
    entries[(2, 2)] = stay
    if swap:
        entries[(1, 2)] = swap
        entries[(2, 1)] = swap
    return Operator.from_entries(entries, (2, 2), EXACT)


def injection_gate(x: Fraction, y: Fraction) -> Operator:
    """Single-site reservoir [[1-x, y], [x, 1-y]]."""
    return Operator.from_dense([[1 - Fraction(x), Fraction(y)], [Fraction(x), 1 - Fraction(y)]], (2,), EXACT)


# ============================================================
# GLUED TWO-SITE OPERATOR
# ============================================================
def build_d_operator(w: FaceWeights, checked: bool = False) -> Operator:
    """
    Glued pair operator on two C^4 sites A=(a1,a2), B=(b1,b2): the checked form
    U_{a1 a2 b1} U_{a2 b1 b2} updates b1 first and then a2; the plain form swaps
    A and B afterwards.
    """
    gate = build_face_gate(w)
    layout = (2, 2, 2, 2)
    d_checked = embed_sites(gate, [1, 2, 3], layout) @ embed_sites(gate, [2, 3, 4], layout)
    d_checked = Operator(d_checked.data, (4, 4), d_checked.domain)
    if checked:
        return d_checked
    return glued_swap(d_checked.domain) @ d_checked


def glued_swap(domain: str = EXACT) -> Operator:
    """SWAP of two C^4 sites."""
    entries = {}
    for x in range(4):
        for y in range(4):
            entries[(4 * y + x, 4 * x + y)] = Fraction(1)
    op = Operator.from_entries(entries, (4, 4), EXACT)
    return op if domain == EXACT else op.astype(domain)

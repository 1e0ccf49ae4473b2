import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from sympy.polys.domains import QQ
from sympy.polys.matrices.sdm import SDM

from linalg.operator import DENSE_FILL_THRESHOLD, Operator
from linalg.scalars import EXACT, from_qq, to_qq

try:
    from flint import fmpq, fmpq_mat
    FLINT_AVAILABLE = True
except ImportError:  # sympy's sparse elimination covers the same ground, only slower
    FLINT_AVAILABLE = False

logger = logging.getLogger(__name__)

Row = Dict[int, Fraction]


@dataclass
class LinearSolution:
    particular: List[Fraction]
    kernel: List[List[Fraction]] = field(default_factory=list)
    pivots: List[int] = field(default_factory=list)


@dataclass
class Infeasible:
    """Row combination y with y.A = 0 and y.b != 0."""
    certificate: List[Fraction]
    reason: str = "inconsistent system"


# ============================================================
# ELIMINATION BACKENDS
# ============================================================
def _fill(rows: Sequence[Row], ncols: int) -> float:
    if not rows or not ncols:
        return 0.0
    return sum(len(r) for r in rows) / (len(rows) * ncols)


def _rref_flint(rows: Sequence[Row], ncols: int) -> Tuple[List[Row], List[int]]:
    mat = fmpq_mat(len(rows), ncols)
    for i, row in enumerate(rows):
        for c, v in row.items():
            if v:
                mat[i, c] = fmpq(v.numerator, v.denominator)
    rref_mat, rk = mat.rref()
    zero = fmpq(0)
    out: List[Row] = []
    pivots: List[int] = []
    for r in range(rk):
        row: Row = {}
        for c in range(ncols):
            v = rref_mat[r, c]
            if v != zero:
                row[c] = Fraction(int(v.p), int(v.q))
        if row:
            pivots.append(min(row))
            out.append(row)
    return out, pivots


def _rref_sdm(rows: Sequence[Row], ncols: int) -> Tuple[List[Row], List[int]]:
    dod = {}
    for i, row in enumerate(rows):
        kept = {c: to_qq(v) for c, v in row.items() if v}
        if kept:
            dod[i] = kept
    mat = SDM(dod, (max(len(rows), 1), ncols), QQ)
    rref_mat, pivots = mat.rref()
    out: List[Row] = []
    for i in sorted(rref_mat.keys()):
        out.append({c: from_qq(v) for c, v in rref_mat[i].items()})
    out.sort(key=min)
    return out, sorted(pivots)


def rref_rows(rows: Sequence[Row], ncols: int) -> Tuple[List[Row], List[int]]:
    """
    Exact reduced row echelon form of a sparse rational matrix given as row dicts.
    Dense systems go to flint when it is installed.
    """
    if FLINT_AVAILABLE and _fill(rows, ncols) > DENSE_FILL_THRESHOLD:
        return _rref_flint(rows, ncols)
    return _rref_sdm(rows, ncols)


def _operator_rows(op: Operator) -> List[Row]:
    if op.domain != EXACT:
        raise ValueError("Exact solves need an ExactRational operator")
    rows: List[Row] = [dict() for _ in range(op.dim)]
    for r, c, v in op.entries():
        rows[r][c] = v
    return rows


def _kernel_from_rref(rref: Sequence[Row], pivots: Sequence[int], ncols: int) -> List[List[Fraction]]:
    pivot_set = set(pivots)
    basis = []
    for free in range(ncols):
        if free in pivot_set:
            continue
        vec = [Fraction(0)] * ncols
        vec[free] = Fraction(1)
        for row, p in zip(rref, pivots):
            v = row.get(free)
            if v:
                vec[p] = -v
        basis.append(vec)
    return basis


# ============================================================
# PUBLIC SOLVES
# ============================================================
def nullspace_rows(rows: Sequence[Row], ncols: int) -> List[List[Fraction]]:
    rref, pivots = rref_rows(rows, ncols)
    return _kernel_from_rref(rref, pivots, ncols)


def nullspace_exact(M: Union[Operator, Sequence[Row]], ncols: Optional[int] = None) -> List[List[Fraction]]:
    """Exact basis of {v : Mv = 0}; one vector per free column of the RREF."""
    if isinstance(M, Operator):
        rows, ncols = _operator_rows(M), M.dim
    else:
        rows = list(M)
        if ncols is None:
            raise ValueError("ncols is required for row-dict input")
    return nullspace_rows(rows, ncols)


def solve_rows(rows: Sequence[Row], ncols: int, rhs: Sequence[Fraction]) -> Union[LinearSolution, Infeasible]:
    if len(rhs) != len(rows):
        raise ValueError(f"Right-hand side has {len(rhs)} entries for {len(rows)} rows")
    augmented = []
    for row, b in zip(rows, rhs):
        aug = dict(row)
        if b:
            aug[ncols] = Fraction(b)
        augmented.append(aug)
    rref, pivots = rref_rows(augmented, ncols + 1)
    if ncols in pivots:
        return Infeasible(certificate=_infeasibility_certificate(rows, ncols, rhs))
    particular = [Fraction(0)] * ncols
    for row, p in zip(rref, pivots):
        particular[p] = row.get(ncols, Fraction(0))
    kernel = _kernel_from_rref([{c: v for c, v in r.items() if c < ncols} for r in rref], pivots, ncols)
    return LinearSolution(particular=particular, kernel=kernel, pivots=list(pivots))


def _infeasibility_certificate(rows: Sequence[Row], ncols: int, rhs: Sequence[Fraction]) -> List[Fraction]:
    transposed: List[Row] = [dict() for _ in range(ncols)]
    for i, row in enumerate(rows):
        for c, v in row.items():
            transposed[c][i] = v
    for y in nullspace_rows(transposed, len(rows)):
        dot = sum((a * Fraction(b) for a, b in zip(y, rhs)), Fraction(0))
        if dot:
            return [v / dot for v in y]
    return []


def solve_linear_exact(A: Union[Operator, Sequence[Row]], b: Sequence[Fraction], ncols: Optional[int] = None) -> Union[LinearSolution, Infeasible]:
    """Exact particular solution plus kernel basis, or an infeasibility certificate."""
    if isinstance(A, Operator):
        rows, ncols = _operator_rows(A), A.dim
    else:
        rows = list(A)
        if ncols is None:
            raise ValueError("ncols is required for row-dict input")
    return solve_rows(rows, ncols, [Fraction(v) for v in b])


def check_solution(rows: Sequence[Row], x: Sequence[Fraction], rhs: Sequence[Fraction]) -> bool:
    for row, b in zip(rows, rhs):
        if sum((v * x[c] for c, v in row.items()), Fraction(0)) != b:
            return False
    return True

import logging
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from charges.commutant import commutes_exactly, find_commutant, select_generator
from charges.density import as_qubits, glue, to_face_gauge
from charges.schemas import (H_TILDE, H_TILDE_TILDE, ChargeTower, CorrectionField, GluedDensity,
                             InfeasibleSystemError)
from linalg.chain import LocalSum, translation_sum
from linalg.operator import Operator, face_mask
from linalg.sketch import CommutatorEquation, LocalCommutatorSystem, commutator_rhs, solve_particular
from model.propagators import periodic_propagator_sum
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
GENERATOR_RANGE = 6
COMMUTANT_RING = 10
H_TILDE_RING = 6          # glued sites
H_TILDE_TILDE_RING = 8
Q5_CONSTRAINT_PAIRS = 12
HALF = Fraction(1, 2)


# ============================================================
# GLUED RING HELPERS
# ============================================================
def _sites(start: int, length: int, L: int) -> Tuple[int, ...]:
    return tuple(((start - 1 + k) % L) + 1 for k in range(length))


def _at(op: Operator, start: int, L: int, coef=Fraction(1)) -> LocalSum:
    return LocalSum.single(op, _sites(start, op.sites, L), 4 ** L, coef)


def _comm(a: LocalSum, b: LocalSum) -> LocalSum:
    return a @ b - b @ a


def _check_ring(L: int, minimum: int) -> None:
    if L < minimum:
        raise ValueError(f"Glued ring of {L} sites is too short, need at least {minimum}")


def ring_placements(L: int, length: int = 3) -> List[Tuple[int, ...]]:
    return [_sites(s, length, L) for s in range(1, L + 1)]


def face_columns(dim: int = 64) -> np.ndarray:
    return np.flatnonzero(face_mask(dim).ravel())


def _correction_from(values: List[Fraction], columns: np.ndarray, kind: str) -> CorrectionField:
    entries = {(int(c) // 64, int(c) % 64): v for c, v in zip(columns, values) if v}
    return CorrectionField(kind, GluedDensity(Operator.from_entries(entries, (4, 4, 4)), 1))


# ============================================================
# CHARGE SUMS ON THE GLUED RING
# ============================================================
def q3_sum(h: GluedDensity, L: int) -> LocalSum:
    return translation_sum(h.op, L)


def q5_quadratic(h: GluedDensity, L: int) -> LocalSum:
    """sum_i -[h_i, h_{i+1} + h_{i+2}]"""
    _check_ring(L, 5)
    total = LocalSum(4 ** L)
    for i in range(1, L + 1):
        total = total - _comm(_at(h.op, i, L), _at(h.op, i + 1, L) + _at(h.op, i + 2, L))
    return total


def q5_sum(h: GluedDensity, h_tilde: CorrectionField, L: int) -> LocalSum:
    return q5_quadratic(h, L) + translation_sum(h_tilde.op, L)


def q7_known(h: GluedDensity, h_tilde: CorrectionField, L: int) -> LocalSum:
    """
    Density at anchor i, with h_k and ht_k sitting at glued site i+k-1:
    [h5 + h4 + h3/2, [h1 + h2, h3]] - [h5, ht3 + ht4] + 1/2 [h3 + h4, ht5]
    """
    _check_ring(L, 7)
    total = LocalSum(4 ** L)
    for i in range(1, L + 1):
        hk = {k: _at(h.op, i + k - 1, L) for k in range(1, 6)}
        tk = {k: _at(h_tilde.op, i + k - 1, L) for k in (3, 4, 5)}
        outer = hk[5] + hk[4] + hk[3].scale(HALF)
        total = total + _comm(outer, _comm(hk[1] + hk[2], hk[3]))
        total = total - _comm(hk[5], tk[3] + tk[4])
        total = total + _comm(hk[3] + hk[4], tk[5]).scale(HALF)
    return total


def q7_sum(h: GluedDensity, h_tilde: CorrectionField, h_tilde_tilde: CorrectionField, L: int) -> LocalSum:
    return q7_known(h, h_tilde, L) + translation_sum(h_tilde_tilde.op, L)


# ============================================================
# CORRECTION SOLVES
# ============================================================
def solve_h_tilde(h: GluedDensity, L: int = H_TILDE_RING, seed: int = 0) -> CorrectionField:
    """Face-diagonal range-3 correction making the quadratic Q5 commute with Q3."""
    if h.local_dim != 4 or h.range != 3:
        raise ValueError(f"Expected a range-3 C^4 density, got layout {h.op.layout}")
    Q3 = q3_sum(h, L)
    eq = CommutatorEquation(Q3, commutator_rhs(q5_quadratic(h, L), Q3))
    system = LocalCommutatorSystem(4, 4 ** L, ring_placements(L), face_columns(), [eq], seed=seed)
    values = solve_particular(system, H_TILDE)
    if values is None:
        raise InfeasibleSystemError("No range-3 correction closes [Q5, Q3] = 0")
    field_ = _correction_from(values, system.columns, H_TILDE)
    logger.info(f"h_tilde: {field_.op.nnz} nonzero entries")
    return field_


def solve_h_tilde_tilde(h: GluedDensity, h_tilde: CorrectionField, L: int = H_TILDE_TILDE_RING,
                        seed: int = 0) -> CorrectionField:
    """Correction of the next charge, constrained by commutation with both Q3 and Q5."""
    Q3 = q3_sum(h, L)
    Q5 = q5_sum(h, h_tilde, L)
    known = q7_known(h, h_tilde, L)
    equations = [CommutatorEquation(Q3, commutator_rhs(known, Q3)),
                 CommutatorEquation(Q5, commutator_rhs(known, Q5), Q5_CONSTRAINT_PAIRS)]
    system = LocalCommutatorSystem(4, 4 ** L, ring_placements(L), face_columns(), equations, seed=seed)
    values = solve_particular(system, H_TILDE_TILDE)
    if values is None:
        raise InfeasibleSystemError("No range-3 correction closes [Q7, Q3] = [Q7, Q5] = 0")
    field_ = _correction_from(values, system.columns, H_TILDE_TILDE)
    logger.info(f"h_tilde_tilde: {field_.op.nnz} nonzero entries")
    return field_


# ============================================================
# ASSEMBLY ON THE QUBIT CHAIN
# ============================================================
def assemble_Q10(h: GluedDensity, h_tilde: CorrectionField, N: int) -> Operator:
    if N % 2 or N < 12:
        raise ValueError(f"Q10 needs an even ring with N >= 12, got N={N}")
    return as_qubits(q5_sum(h, h_tilde, N // 2).to_operator())


def assemble_Q14(h: GluedDensity, h_tilde: CorrectionField, h_tilde_tilde: CorrectionField, N: int) -> Operator:
    if N % 2 or N < 16:
        raise ValueError(f"Q14 needs an even ring with N >= 16, got N={N}")
    return as_qubits(q7_sum(h, h_tilde, h_tilde_tilde, N // 2).to_operator())


# ============================================================
# PIPELINE AND VERIFICATION
# ============================================================
def generator_density(w: FaceWeights, seed: int = 0) -> GluedDensity:
    """Glued, face-gauged density of the shortest non-diagonal charge."""
    U = periodic_propagator_sum(w, COMMUTANT_RING)
    basis = find_commutant(U, GENERATOR_RANGE, seed=seed)
    q = select_generator(basis)
    if q is None:
        raise InfeasibleSystemError(f"No non-diagonal range-{GENERATOR_RANGE} charge for {w.to_json()}")
    return to_face_gauge(glue(q))


def build_tower(w: FaceWeights, depth: int = 2, seed: int = 0) -> ChargeTower:
    """depth 1 stops after h_tilde, depth 2 also solves h_tilde_tilde."""
    logger.info(f"Building charge tower for {w.to_json()}, depth {depth}")
    h = generator_density(w, seed)
    tower = ChargeTower(w, h)
    tower.h_tilde = solve_h_tilde(h, seed=seed)
    if depth >= 2:
        tower.h_tilde_tilde = solve_h_tilde_tilde(h, tower.h_tilde, seed=seed)
    return tower


def verify_tower(tower: ChargeTower, N: Optional[int] = None, seed: int = 0) -> Dict[str, bool]:
    """Exact modular checks of every commutator among U and the assembled charges."""
    checks: Dict[str, bool] = {}
    deepest = 2 if tower.h_tilde_tilde is not None else 1
    if N is None:
        N = 16 if deepest == 2 else 14
    if N % 2 or N < 12:
        raise ValueError(f"Tower verification needs an even ring with N >= 12, got N={N}")
    L = N // 2
    U = periodic_propagator_sum(tower.weights, N)
    charges = {"Q6": q3_sum(tower.h, L)}
    if tower.h_tilde is not None:
        charges["Q10"] = q5_sum(tower.h, tower.h_tilde, L)
    if tower.h_tilde_tilde is not None and L >= 7:
        charges["Q14"] = q7_sum(tower.h, tower.h_tilde, tower.h_tilde_tilde, L)
    names = list(charges)
    for i, a in enumerate(names):
        checks[f"[U,{a}]"] = commutes_exactly(charges[a], U, seed=seed + i)
        for b in names[i + 1:]:
            checks[f"[{a},{b}]"] = commutes_exactly(charges[a], charges[b], seed=seed + i)
    failed = [k for k, v in checks.items() if not v]
    if failed:
        logger.warning(f"Tower checks failed at N={N}: {failed}")
    else:
        logger.info(f"All {len(checks)} tower commutators vanish at N={N}")
    tower.checks.update(checks)
    return checks

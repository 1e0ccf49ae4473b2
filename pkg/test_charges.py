import random
from fractions import Fraction as F
from unittest.mock import patch

import numpy as np
import pytest

from charges.commutant import commutator_bits, commutes_exactly, find_commutant, select_generator
from charges.density import (extensive_operator, extensive_sum, glue, is_left_aligned, left_align,
                             reflect_density, to_face_gauge, unglue)
from charges.io import load_density, load_tower, save_density, save_tower
from charges.schemas import NO_GAUGE, ChargeDensity, ChargeTower, GluedDensity, InfeasibleSystemError
from charges.tower import (assemble_Q10, build_tower, q3_sum, solve_h_tilde, verify_tower)
from linalg.chain import translation_sum
from linalg.operator import Operator, commutator, face_mask, is_face_diagonal, kron
from model.propagators import build_periodic_propagator, periodic_propagator_sum
from model.schemas import FaceWeights

I2 = Operator.identity((2,))
Z = Operator.from_dense([[1, 0], [0, -1]])
X = Operator.from_dense([[0, 1], [1, 0]])


def chain(*ops):
    out = ops[0]
    for op in ops[1:]:
        out = kron(out, op)
    return out


def random_exact(layout, seed, density=0.3, mask=None):
    rng = np.random.default_rng(seed)
    dim = int(np.prod(layout))
    vals = rng.integers(-3, 4, size=(dim, dim))
    keep = rng.random((dim, dim)) < density
    if mask is not None:
        keep &= mask
    entries = {(r, c): F(int(vals[r, c])) for r, c in zip(*np.nonzero(keep)) if vals[r, c]}
    return Operator.from_entries(entries, layout)


@pytest.fixture
def deformed():
    return FaceWeights.default()


def test_left_align_is_idempotent_and_keeps_the_charge():
    q = ChargeDensity(random_exact((2,) * 4, seed=1), 2, NO_GAUGE)
    aligned = left_align(q)
    assert is_left_aligned(aligned)
    assert (left_align(aligned).op - aligned.op).is_zero()
    full = extensive_operator(q, 6)
    identity_part = Operator.identity((2,) * 6).scale(3 * q.op.trace() / q.op.dim)
    assert (extensive_operator(aligned, 6) - (full - identity_part)).is_zero()


def test_left_align_removes_identity_and_moves_leading_identity_terms():
    assert left_align(ChargeDensity(Operator.identity((2,) * 4), 2, NO_GAUGE)).op.is_zero()
    moved = left_align(ChargeDensity(chain(I2, I2, Z, Z), 2, NO_GAUGE))
    assert (moved.op - chain(Z, Z, I2, I2)).is_zero()


def test_glue_is_a_reshape():
    q = ChargeDensity(random_exact((2,) * 6, seed=2, density=0.05), 2)
    g = glue(q)
    assert g.op.layout == (4, 4, 4)
    assert g.op.pattern() == q.op.pattern()
    back = unglue(g)
    assert back.op.layout == (2,) * 6
    assert (back.op - q.op).is_zero()
    with pytest.raises(ValueError):
        glue(ChargeDensity(random_exact((2,) * 5, seed=3), 2))


def test_embed_then_glue_matches_glue_then_embed():
    q = ChargeDensity(random_exact((2,) * 6, seed=4, density=0.05), 2)
    qubit_sum = extensive_operator(q, 8)
    glued_sum = extensive_operator(ChargeDensity(glue(q).op, 1), 4)
    assert (Operator(glued_sum.data, (2,) * 8, glued_sum.domain) - qubit_sum).is_zero()


def test_second_gluing_sums_neighbouring_densities():
    h = random_exact((4, 4, 4), seed=5, density=0.02)
    eta = glue(GluedDensity(h, 1), times=2)
    one = Operator.identity((4,))
    expected = kron(h, one) + kron(one, h)
    assert eta.op.layout == (16, 16)
    assert (Operator(eta.op.data, (4,) * 4, eta.op.domain) - expected).is_zero()


def test_reflection_is_an_involution_on_charges():
    q = left_align(ChargeDensity(random_exact((2,) * 6, seed=6, density=0.02), 2, NO_GAUGE))
    twice = reflect_density(reflect_density(q))
    assert (extensive_operator(twice, 8) - extensive_operator(q, 8)).is_zero()


def test_reflection_of_odd_palindrome_is_itself():
    q = ChargeDensity(chain(Z, X, Z), 2)
    assert (reflect_density(q).op - left_align(q).op).is_zero()


def test_face_gauge_removes_a_divergence():
    face = random_exact((4, 4, 4), seed=7, density=0.05, mask=face_mask(64))
    a = random_exact((4, 4), seed=8, density=0.1)
    one = Operator.identity((4,))
    h = GluedDensity(face + kron(a, one) - kron(one, a), 1)
    assert not is_face_diagonal(h.op)
    gauged = to_face_gauge(h)
    assert is_face_diagonal(gauged.op)
    before = extensive_operator(ChargeDensity(h.op, 1), 4)
    after = extensive_operator(ChargeDensity(gauged.op, 1), 4)
    assert (before - after).is_zero()


def test_short_range_commutant_is_diagonal(deformed):
    U = periodic_propagator_sum(deformed, 6)
    basis = find_commutant(U, 4)
    assert basis
    assert all(q.is_diagonal() for q in basis)
    assert all(is_left_aligned(q) for q in basis)
    assert select_generator(basis) is None


def test_ungauged_commutant_contains_identity(deformed):
    U = periodic_propagator_sum(deformed, 6)
    fixed = find_commutant(U, 3)
    loose = find_commutant(U, 3, gauge=NO_GAUGE)
    assert len(loose) > len(fixed)
    assert all(q.op.trace() == 0 for q in fixed)
    assert any(q.op.trace() != 0 for q in loose)


def random_weights(seed):
    rng = random.Random(seed)
    return FaceWeights(*(F(rng.randint(1, 9), rng.randint(2, 11)) for _ in range(4)))


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("r", [3, 4, 5, pytest.param(6, marks=pytest.mark.slow)])
def test_first_non_diagonal_charge_has_range_six(seed, r):
    w = random_weights(seed)
    U = periodic_propagator_sum(w, 8)
    basis = find_commutant(U, r)
    non_diagonal = sum(not q.is_diagonal() for q in basis)
    if r < 6:
        assert non_diagonal == 0
        assert select_generator(basis) is None
    else:
        assert non_diagonal >= 1
        assert not select_generator(basis).is_diagonal()
    full = build_periodic_propagator(w, 8).full
    for q in basis:
        assert commutator(extensive_operator(q, 8), full).is_zero()


def test_short_rings_check_every_commutator_column():
    hopping = kron(X, X)
    with patch("charges.commutant.sampled_zero") as randomized:
        assert commutes_exactly(translation_sum(Z, 8), translation_sum(kron(Z, Z), 8))
        assert not commutes_exactly(translation_sum(Z, 8), translation_sum(hopping, 8))
    randomized.assert_not_called()
    assert commutator_bits(translation_sum(Z, 8), translation_sum(hopping, 8)) > 0


def test_select_generator_removes_diagonal_overlap():
    d = ChargeDensity(chain(Z, Z, I2), 2)
    q = ChargeDensity(chain(X, Z, X) + chain(Z, Z, I2).scale(3), 2)
    gen = select_generator([d, q])
    assert (gen.op - chain(X, Z, X)).is_zero()


def test_random_generator_has_no_correction():
    h = GluedDensity(random_exact((4, 4, 4), seed=11, density=0.05, mask=face_mask(64)), 1)
    with pytest.raises(InfeasibleSystemError):
        solve_h_tilde(h)


def test_q10_needs_a_long_ring():
    h = GluedDensity(random_exact((4, 4, 4), seed=12, density=0.01), 1)
    with pytest.raises(ValueError):
        assemble_Q10(h, None, 10)


def test_density_file_keeps_sidecar(tmp_path):
    q = ChargeDensity(chain(X, Z, X, I2), 2)
    save_density(q, tmp_path / "q.op")
    assert (tmp_path / "q.op.json").exists()
    loaded = load_density(tmp_path / "q.op")
    assert loaded.shift_period == 2 and loaded.range == 4
    assert (loaded.op - q.op).is_zero()


def test_tower_folder(tmp_path, deformed):
    h = GluedDensity(random_exact((4, 4, 4), seed=13, density=0.01), 1)
    tower = ChargeTower(deformed, h, checks={"[U,Q6]": True})
    save_tower(tower, tmp_path / "tower")
    loaded = load_tower(tmp_path / "tower")
    assert loaded.h_tilde is None
    assert loaded.weights == deformed
    assert loaded.checks == {"[U,Q6]": True}


# ============================================================
# DESK-SCALE PIPELINES
# ============================================================
@pytest.mark.slow
def test_range_six_generator_and_its_reflection(deformed):
    U = periodic_propagator_sum(deformed, 10)
    basis = find_commutant(U, 6)
    gen = select_generator(basis)
    assert gen is not None and not gen.is_diagonal()
    partner = reflect_density(gen)
    assert commutes_exactly(extensive_sum(partner, 10), U)


@pytest.mark.slow
def test_first_correction_closes_the_tower(deformed):
    tower = build_tower(deformed, depth=1)
    assert not tower.h_tilde.op.is_zero()
    assert is_face_diagonal(tower.h.op)
    checks = verify_tower(tower, N=14)
    assert all(checks.values()), checks
    assert commutes_exactly(q3_sum(tower.h, 6), periodic_propagator_sum(deformed, 12))


@pytest.mark.slow
def test_deterministic_point_tower():
    tower = build_tower(FaceWeights.rca54(), depth=1)
    assert all(verify_tower(tower, N=12).values())


@pytest.mark.slow
def test_second_correction_closes_the_tower(deformed):
    tower = build_tower(deformed, depth=2)
    checks = verify_tower(tower, N=16)
    assert set(checks) >= {"[U,Q14]", "[Q6,Q14]", "[Q10,Q14]"}
    assert all(checks.values()), checks

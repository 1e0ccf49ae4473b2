from fractions import Fraction as F

import numpy as np
import pytest

from linalg.operator import Operator
from model.propagators import build_open_propagator
from model.schemas import BoundaryDriving, FaceWeights, default_ness_model, stochastic_face_weights
from ness.brute import brute_force_ness, gap_probability, site_occupations
from ness.io import load_mpa, load_ness_csv, save_level_report, save_mpa, save_ness_csv
from ness.levels import fit_wall_time_exponent, lift_level, solve_level, solve_levels, solve_levels_exact
from ness.mpa import (RIGHT, face_algebra_residuals, gauge_transform, mpa_contract, mpa_gap, residuals,
                      uniform_mpa)
from ness.schemas import BLOCK, R, RATIONAL_LIFT, Z, NessPair, PatchMPA, SingularParametersError


def all_zero(res):
    return all(np.all(arr == 0) for eqs in res.values() for arr in eqs.values())


def block_diagonal(blocks):
    dim = BLOCK * len(blocks)
    G = np.full((dim, dim), F(0), dtype=object)
    for n, b in enumerate(blocks):
        G[BLOCK * n:BLOCK * (n + 1), BLOCK * n:BLOCK * (n + 1)] = np.array([[F(v) for v in row] for row in b])
    return G


GAUGE_BLOCKS = [
    [[2, 1, 0], [0, 1, 1], [1, 0, 1]],
    [[1, 2, 0], [0, 1, 3], [0, 0, 1]],
    [[3, 0, 1], [1, 1, 0], [0, 2, 1]],
]


@pytest.fixture
def uniform_model():
    """beta = gamma with symmetric driving: every gate is doubly stochastic."""
    return stochastic_face_weights("1/3", "1/3"), BoundaryDriving.parse("1/2", "1/2", "1/2", "1/2")


@pytest.fixture
def ness_params():
    spec = default_ness_model(6)
    return spec.weights, spec.driving


# ---------------- relations ----------------
def test_uniform_ansatz_satisfies_every_relation(uniform_model):
    w, drv = uniform_model
    mpa = uniform_mpa(3)
    assert all_zero(residuals(mpa, w, drv))
    assert all(np.all(r == 0) for r in face_algebra_residuals(mpa, w).values())


def test_zero_ansatz_is_a_degenerate_solution(uniform_model):
    w, drv = uniform_model
    mpa = PatchMPA.zeros(2, exact=True)
    assert all_zero(residuals(mpa, w, drv))
    assert min(abs(v) for v in mpa.level_entries(1)) == 0


def test_perturbed_entry_breaks_a_relation(uniform_model):
    w, drv = uniform_model
    mpa = uniform_mpa(2)
    mpa.tensors[Z][0, 0, 1, 0] = F(1, 5)
    assert not all_zero(residuals(mpa, w, drv))
    assert not all(np.all(r == 0) for r in face_algebra_residuals(mpa, w).values())


def test_residual_level_out_of_range(uniform_model):
    w, drv = uniform_model
    with pytest.raises(ValueError):
        residuals(uniform_mpa(2), w, drv, level=3)


# ---------------- contraction ----------------
def test_uniform_contraction_is_the_uniform_steady_state(uniform_model):
    w, drv = uniform_model
    pair = mpa_contract(uniform_mpa(2), 4)
    assert all(v == 1 for v in pair.p) and all(v == 1 for v in pair.p_prime)
    prop = build_open_propagator(w, drv, 4)
    assert all(pair.normalized().check(prop.even, prop.odd).values())
    assert gap_probability(pair) == F(1, 16)


def test_contraction_needs_enough_levels():
    with pytest.raises(ValueError):
        mpa_contract(uniform_mpa(1), 4)
    with pytest.raises(ValueError):
        mpa_contract(uniform_mpa(3), 5)


def test_raising_the_level_keeps_small_chains():
    small = mpa_contract(uniform_mpa(2), 4)
    large = mpa_contract(uniform_mpa(4), 4)
    assert list(small.p) == list(large.p)


def test_empty_chain_weight_without_enumerating():
    mpa = gauge_transform(uniform_mpa(3), block_diagonal(GAUGE_BLOCKS))
    for N in (4, 6):
        assert mpa_gap(mpa, N) == gap_probability(mpa_contract(mpa, N))
    assert mpa_gap(uniform_mpa(4), 8) == F(1, 256)
    assert isinstance(mpa_gap(uniform_mpa(2, exact=False), 4), float)
    with pytest.raises(ValueError):
        mpa_gap(uniform_mpa(2), 6)


# ---------------- gauge ----------------
def test_identity_gauge_changes_nothing():
    mpa = uniform_mpa(2)
    G = block_diagonal([np.eye(3, dtype=int)] * 2)
    out = gauge_transform(mpa, G)
    assert all(np.array_equal(out.tensors[k], mpa.tensors[k]) for k in mpa.tensors)


def test_equal_gauges_keep_relations_and_contraction(uniform_model):
    w, drv = uniform_model
    mpa = uniform_mpa(3)
    out = gauge_transform(mpa, block_diagonal(GAUGE_BLOCKS))
    assert all_zero(residuals(out, w, drv))
    before, after = mpa_contract(mpa, 6), mpa_contract(out, 6)
    assert list(before.p) == list(after.p)
    assert list(before.p_prime) == list(after.p_prime)


def test_independent_gauges_keep_only_the_contraction(uniform_model):
    w, drv = uniform_model
    mpa = uniform_mpa(3)
    G = block_diagonal([np.eye(3, dtype=int)] * 3)
    H = block_diagonal([2 * np.eye(3, dtype=int)] * 3)
    out = gauge_transform(mpa, G, H)
    assert list(mpa_contract(out, 6).p) == list(mpa_contract(mpa, 6).p)
    assert not np.all(residuals(out, w, drv, level=1)[1][RIGHT] == 0)


def test_gauge_rejects_singular_and_mixing_matrices():
    mpa = uniform_mpa(2)
    with pytest.raises(ValueError):
        gauge_transform(mpa, block_diagonal([np.zeros((3, 3), dtype=int)] * 2))
    mixing = block_diagonal([np.eye(3, dtype=int)] * 2)
    mixing[0, 3] = F(1)
    with pytest.raises(ValueError):
        gauge_transform(mpa, mixing)


def test_float_gauge_on_float_ansatz(uniform_model):
    w, drv = uniform_model
    mpa = uniform_mpa(2, exact=False)
    rng = np.random.default_rng(3)
    G = np.zeros((6, 6))
    for n in range(2):
        G[3 * n:3 * n + 3, 3 * n:3 * n + 3] = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    out = gauge_transform(mpa, G)
    assert np.allclose(mpa_contract(out, 4).p, 1.0)
    worst = max(float(np.max(np.abs(a))) for eqs in residuals(out, w, drv).values() for a in eqs.values())
    assert worst < 1e-10


# ---------------- brute force ----------------
def test_brute_force_steady_state_at_n6(ness_params):
    w, drv = ness_params
    prop = build_open_propagator(w, drv, 6)
    pair = brute_force_ness(prop.even, prop.odd)
    assert pair.exact
    assert pair.p.sum() == 1 and pair.p_prime.sum() == 1
    assert all(pair.check(prop.even, prop.odd).values())
    gap = gap_probability(pair)
    assert isinstance(gap, F) and gap == pair.p[0]

    approx = brute_force_ness(prop.even, prop.odd, exact=False)
    assert np.allclose(approx.p, np.array(pair.p, dtype=np.float64), atol=1e-12)
    assert all(approx.check(prop.even, prop.odd).values())


def test_brute_force_rejects_a_degenerate_map():
    eye = Operator.identity((2, 2))
    with pytest.raises(ValueError):
        brute_force_ness(eye, eye)


def test_gap_and_occupations_of_the_uniform_vector():
    uniform = np.full(8, F(1, 8), dtype=object)
    pair = NessPair(uniform, uniform.copy(), 3)
    assert gap_probability(pair) == F(1, 8)
    assert list(site_occupations(pair)) == [F(1, 2)] * 3


def test_occupations_follow_the_driving(ness_params):
    w, drv = ness_params
    prop = build_open_propagator(w, drv, 4)
    pair = brute_force_ness(prop.even, prop.odd)
    occ = site_occupations(pair)
    assert len(occ) == 4
    assert all(0 < v < 1 for v in occ)


# ---------------- recursion ----------------
def test_singular_point_is_rejected():
    drv = BoundaryDriving.parse("1/2", "1/3", "1/4", "1/5")
    with pytest.raises(SingularParametersError):
        solve_levels(stochastic_face_weights(0, 0), drv, 3)
    with pytest.raises(ValueError):
        solve_levels(FaceWeights.default(), drv, 3)


def test_wall_time_exponent_of_a_power_law():
    timings = [(n, 0.002 * n ** 3.5) for n in range(1, 16)]
    assert fit_wall_time_exponent(timings) == pytest.approx(3.5)
    with pytest.raises(ValueError):
        fit_wall_time_exponent(timings[:4])


# ---------------- files ----------------
def test_ansatz_and_table_files(tmp_path, uniform_model, ness_params):
    w, drv = uniform_model
    mpa = gauge_transform(uniform_mpa(2), block_diagonal(GAUGE_BLOCKS[:2]))
    save_mpa(mpa, tmp_path / "mpa.json", w, drv)
    again = load_mpa(tmp_path / "mpa.json")
    assert again.exact and again.max_level == 2
    assert all(np.array_equal(again.tensors[k], mpa.tensors[k]) for k in mpa.tensors)

    w, drv = ness_params
    prop = build_open_propagator(w, drv, 4)
    pair = brute_force_ness(prop.even, prop.odd)
    save_ness_csv(pair, tmp_path / "ness.csv")
    loaded = load_ness_csv(tmp_path / "ness.csv")
    assert loaded.N == 4 and list(loaded.p) == list(pair.p)


@pytest.mark.slow
def test_first_level_has_an_all_nonzero_solution(ness_params):
    w, drv = ness_params
    mpa, report = solve_level(None, 1, w, drv, seed=1, starts=4)
    assert report.ok and report.all_nonzero
    assert max(report.residuals.values()) < 1e-9
    assert np.all(mpa.tensors[R][:, :, BLOCK:] == 0)


@pytest.mark.slow
def test_recursion_reproduces_brute_force(tmp_path, ness_params):
    w, drv = ness_params
    mpa, reports = solve_levels(w, drv, 4, seed=0)
    assert [r.level for r in reports] == [1, 2, 3, 4]
    assert all(r.ok for r in reports)
    for N in (6, 8):
        prop = build_open_propagator(w, drv, N)
        exact = brute_force_ness(prop.even, prop.odd)
        pair = mpa_contract(mpa, N).normalized()
        assert np.allclose(pair.p, np.array(exact.p, dtype=np.float64), atol=1e-9)
        assert gap_probability(pair) == pytest.approx(float(gap_probability(exact)), abs=1e-9)
    save_level_report(reports, tmp_path / "levels.csv")
    assert (tmp_path / "levels.csv").read_text().startswith("level,")


@pytest.mark.slow
def test_first_level_lifts_to_rationals(uniform_model):
    w, drv = uniform_model
    mpa, report = lift_level(None, 1, w, drv, seed=1, starts=4)
    assert mpa.exact and report.ok and report.path == RATIONAL_LIFT
    assert all_zero(residuals(mpa, w, drv, level=1))


@pytest.mark.slow
def test_exact_ansatz_equals_the_exact_brute_force(ness_params):
    w, drv = ness_params
    mpa, reports = solve_levels_exact(w, drv, 5)
    assert [r.level for r in reports] == [1, 2, 3, 4, 5]
    assert all(r.ok for r in reports)
    assert all_zero(residuals(mpa, w, drv))
    for N in (4, 6, 8, 10):
        prop = build_open_propagator(w, drv, N)
        exact = brute_force_ness(prop.even, prop.odd, exact=True)
        pair = mpa_contract(mpa, N).normalized()
        assert pair.exact
        assert list(pair.p) == list(exact.p)
        assert mpa_gap(mpa, N) == gap_probability(exact)


@pytest.mark.slow
def test_recursion_reaches_level_fifteen_in_polynomial_time(ness_params):
    w, drv = ness_params
    mpa, reports = solve_levels(w, drv, 15, seed=0, verify=False)
    assert mpa.max_level == 15
    assert all(r.ok for r in reports)
    exponent = fit_wall_time_exponent([(r.level, r.seconds) for r in reports])
    assert 2.5 <= exponent <= 4.5

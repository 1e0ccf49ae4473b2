import numpy as np
import pytest
from PIL import Image

from model.propagators import build_periodic_propagator
from model.schemas import OPEN, ChainGeometry, FaceWeights, default_ness_model, stochastic_face_weights
from sampler.render import read_pbm, render_png, write_pbm
from sampler.trajectory import (empirical_distribution, half_step_transition_counts, initial_configuration,
                                make_rng, sample_ensemble, sample_trajectory)
from sampler.validate import (binomial_deviations, chi_square_against_face_weights, exact_distribution,
                              total_variation)


@pytest.fixture
def weights():
    return stochastic_face_weights("30/101", "40/49")


def test_empty_sites_stay_empty_without_gamma():
    w = stochastic_face_weights("1/3", "0")
    traj = sample_trajectory(w, ChainGeometry(8), "all-zero", 10, seed=1)
    assert not traj.frames.any()
    assert traj.frames.shape == (21, 8)


def test_gamma_one_fills_first_active_layer():
    w = stochastic_face_weights("1/2", "1")
    traj = sample_trajectory(w, ChainGeometry(8), "all-zero", 1, seed=3)
    assert traj.layers[0] == "odd"
    assert traj.frames[1][0::2].all()
    assert not traj.frames[1][1::2].any()


def test_same_seed_same_trajectory(weights):
    a = sample_trajectory(weights, ChainGeometry(10), "bernoulli:0.5", 20, seed=7, index=2)
    b = sample_trajectory(weights, ChainGeometry(10), "bernoulli:0.5", 20, seed=7, index=2)
    c = sample_trajectory(weights, ChainGeometry(10), "bernoulli:0.5", 20, seed=7, index=3)
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)


def test_threaded_ensemble_matches_serial(weights):
    serial = sample_ensemble(weights, ChainGeometry(6), "light-cone:2", 4, seed=11, count=8, workers=1)
    threaded = sample_ensemble(weights, ChainGeometry(6), "light-cone:2", 4, seed=11, count=8, workers=4)
    for s, t in zip(serial, threaded):
        assert np.array_equal(s.frames, t.frames)


def test_deterministic_point_follows_rule_54():
    traj = sample_trajectory(FaceWeights.rca54(), ChainGeometry(12), "bernoulli:0.4", 15, seed=5)
    N = 12
    for step, name in enumerate(traj.layers):
        before, after = traj.frames[step], traj.frames[step + 1]
        active = np.arange(0, N, 2) if name == "odd" else np.arange(1, N, 2)
        flip = (before[(active - 1) % N] | before[(active + 1) % N]).astype(bool)
        expected = before.copy()
        expected[active] = np.where(flip, 1 - before[active], before[active])
        assert np.array_equal(after, expected)


def test_frames_change_only_on_active_sites(weights):
    traj = sample_trajectory(weights, ChainGeometry(8), "bernoulli:0.5", 6, seed=9)
    for step, name in enumerate(traj.layers):
        passive = np.arange(1, 8, 2) if name == "odd" else np.arange(0, 8, 2)
        assert np.array_equal(traj.frames[step][passive], traj.frames[step + 1][passive])


def test_open_chain_frames_change_only_on_active_sites():
    spec = default_ness_model(8)
    traj = sample_trajectory(spec.weights, ChainGeometry(8, OPEN), "bernoulli:0.5", 6, seed=2, drv=spec.driving)
    even_active = {1, 3, 5, 7}
    odd_active = {0, 2, 4, 6}
    for step in range(len(traj.frames) - 1):
        changed = set(np.flatnonzero(traj.frames[step] != traj.frames[step + 1]).tolist())
        assert changed <= (even_active if step % 2 == 0 else odd_active)


def test_one_step_distribution_matches_propagator(weights):
    N = 4
    U = build_periodic_propagator(weights, N).full
    exact = exact_distribution(U, "0000", t=1)
    samples = 100000
    ensemble = sample_ensemble(weights, ChainGeometry(N), "0000", 1, seed=21, count=samples)
    empirical = empirical_distribution(ensemble, 1)
    assert total_variation(empirical, exact) < 0.02
    assert max(binomial_deviations(empirical, exact, samples).values()) < 3.0


def test_transition_frequencies_match_face_weights(weights):
    ensemble = sample_ensemble(weights, ChainGeometry(8), "bernoulli:0.5", 5, seed=13, count=2000)
    counts = half_step_transition_counts(ensemble)
    assert counts.sum() == 2000 * 10 * 4
    assert chi_square_against_face_weights(counts, weights) > 1e-4


def test_chi_square_flags_wrong_weights(weights):
    ensemble = sample_ensemble(weights, ChainGeometry(8), "bernoulli:0.5", 5, seed=13, count=500)
    counts = half_step_transition_counts(ensemble)
    assert chi_square_against_face_weights(counts, stochastic_face_weights("1/2", "1/2")) < 1e-6


def test_empirical_distribution_edge_cases(weights):
    single = sample_trajectory(weights, ChainGeometry(6), "010101", 2, seed=0)
    dist = empirical_distribution([single], 2)
    assert list(dist.values()) == [1.0]
    det = sample_ensemble(FaceWeights.rca54(), ChainGeometry(6), "010000", 3, seed=4, count=20)
    assert len(empirical_distribution(det, 3)) == 1
    other = sample_trajectory(weights, ChainGeometry(8), "all-zero", 2, seed=0)
    with pytest.raises(ValueError):
        empirical_distribution([single, other], 1)
    with pytest.raises(ValueError):
        empirical_distribution([single], 3)


def test_initial_configurations():
    rng = make_rng(0)
    cone = initial_configuration("light-cone:4", 12, rng)
    assert not cone[:4].any() and not cone[8:].any()
    assert initial_configuration("0110", 4, rng).tolist() == [0, 1, 1, 0]
    with pytest.raises(ValueError):
        initial_configuration("0110", 6, rng)
    with pytest.raises(ValueError):
        initial_configuration("light-cone:20", 12, rng)


def test_nonstochastic_weights_are_refused():
    with pytest.raises(ValueError):
        sample_trajectory(FaceWeights.default(), ChainGeometry(6), "all-zero", 1, seed=0)


def test_pbm_and_png_outputs(weights, tmp_path):
    traj = sample_trajectory(weights, ChainGeometry(10), "light-cone:4", 5, seed=8)
    write_pbm(traj, tmp_path / "traj.pbm")
    assert (tmp_path / "traj.pbm").read_text().startswith("P1\n")
    assert np.array_equal(read_pbm(tmp_path / "traj.pbm"), traj.frames)
    render_png(traj, tmp_path / "traj.png", scale=3)
    with Image.open(tmp_path / "traj.png") as img:
        assert img.size == (30, 33)

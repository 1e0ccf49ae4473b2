import json
from fractions import Fraction as F
from unittest.mock import patch

import numpy as np
import pytest

from diagnostics.digits import (SIX_VERTEX_STAGGERED, ansatz_gap, digit_complexity, digit_complexity_scan,
                                fit_growth, model_gap, rca54_gap, six_vertex_gap)
from diagnostics.io import save_digit_scan, save_spacing_ratios
from diagnostics.schemas import EXPONENTIAL, GINUE, LINEAR, POISSON, QUADRATIC, DigitComplexityRecord
from diagnostics.spectrum import complex_spacing_ratios, propagator_spectrum, reference_spectrum
from model.propagators import build_open_propagator
from model.schemas import default_ness_model
from ness.brute import brute_force_ness, gap_probability
from ness.mpa import uniform_mpa


def synthetic(law, sizes):
    return [DigitComplexityRecord(N, F(1, 10 ** (law(N) - 1)), law(N)) for N in sizes]


# ---------------- digit complexity ----------------
def test_digit_counts():
    assert digit_complexity(F(1, 8)) == 1
    assert digit_complexity(F(3, 1000)) == 4
    assert digit_complexity(7) == 1
    value = F(22, 1575)
    for k in (1, 3, 5, 7, 25):
        assert digit_complexity(k * value) <= digit_complexity(value)


def test_growth_laws_are_told_apart():
    linear = fit_growth(synthetic(lambda N: 16 * N + 3, range(2, 14)))
    assert linear.law == LINEAR and linear.slope == pytest.approx(16)
    quadratic = fit_growth(synthetic(lambda N: 2 * N * N + 1, range(2, 14)))
    assert quadratic.law == QUADRATIC
    exponential = fit_growth(synthetic(lambda N: int(round(5.2 * np.exp(1.52 * N))), range(1, 9)))
    assert exponential.law == EXPONENTIAL
    assert exponential.params[EXPONENTIAL][1] == pytest.approx(1.52, abs=0.02)


def test_growth_fit_survives_dropping_the_smallest_size():
    records = synthetic(lambda N: 2 * N * N + 1, range(2, 14))
    assert fit_growth(records).law == fit_growth(records[1:]).law
    with pytest.raises(ValueError):
        fit_growth(records[:4])


def test_scan_over_a_closed_form_observable():
    records, fit = digit_complexity_scan(lambda N: F(1, 10 ** (3 * N)), [8, 2, 3, 4, 5, 6, 7])
    assert [r.N for r in records] == [2, 3, 4, 5, 6, 7, 8]
    assert [r.digits for r in records] == [3 * N + 1 for N in range(2, 9)]
    assert fit.law == LINEAR and fit.slope == pytest.approx(3)
    with pytest.raises(ValueError):
        digit_complexity_scan(lambda N: 0.5, [2, 3, 4, 5])


def test_model_observables_are_exact():
    spec = default_ness_model(4)
    prop = build_open_propagator(spec.weights, spec.driving, 4)
    gap = rca54_gap(4)
    assert gap == gap_probability(brute_force_ness(prop.even, prop.odd))
    assert 0 < gap < 1
    value = six_vertex_gap()(3)
    assert isinstance(value, F) and 0 < value < 1
    with pytest.raises(ValueError):
        six_vertex_gap()(4)


def test_short_scans_stay_with_the_brute_force():
    spec = default_ness_model(4)
    with patch("diagnostics.digits.solve_levels_exact") as lift:
        observable = ansatz_gap(spec.weights, spec.driving, 6)
    lift.assert_not_called()
    assert observable(4) == rca54_gap(4)
    with pytest.raises(ValueError):
        model_gap(spec.weights, spec.driving, uniform_mpa(2, exact=False))


@pytest.mark.slow
def test_digit_growth_of_the_model_families():
    records, _ = digit_complexity_scan(rca54_gap, [4, 6, 8], fit=False)
    assert [r.digits for r in records] == sorted(r.digits for r in records)
    records, fit = digit_complexity_scan(six_vertex_gap(SIX_VERTEX_STAGGERED), [3, 5, 7, 9], burn_in=1)
    assert records[-1].digits > records[0].digits
    assert fit.law in (LINEAR, QUADRATIC, EXPONENTIAL)


@pytest.mark.slow
def test_model_digits_grow_faster_than_linearly_up_to_fourteen_sites():
    spec = default_ness_model(14)
    observable = ansatz_gap(spec.weights, spec.driving, 14)
    assert observable(8) == model_gap(spec.weights, spec.driving)(8)
    records, fit = digit_complexity_scan(observable, range(4, 15, 2))
    assert [r.N for r in records] == [4, 6, 8, 10, 12, 14]
    assert fit.sizes == [8, 10, 12, 14]
    assert fit.rss[QUADRATIC] < fit.rss[LINEAR]


# ---------------- spacing ratios ----------------
def test_three_collinear_points_by_hand():
    rs = complex_spacing_ratios([0, 1, 2])
    assert np.allclose(rs.ratios, [0.5, -1.0, 0.5])
    assert rs.mean_abs == pytest.approx(2 / 3)


def test_degenerate_spectra():
    rs = complex_spacing_ratios([0, 0, 1, 2, 2 + 1e-13])
    assert rs.ratios.size == 3
    with pytest.raises(ValueError):
        complex_spacing_ratios([1, 1, 2])


def test_uncorrelated_points_match_the_poisson_reference():
    rs = complex_spacing_ratios(reference_spectrum(POISSON, 10000, seed=1))
    assert rs.mean_abs == pytest.approx(2 / 3, abs=0.02)
    assert abs(rs.mean_cos) < 0.03
    assert np.all(np.abs(rs.ratios) <= 1 + 1e-12)
    assert rs.nearest_reference() == POISSON


def test_ginibre_spectrum_matches_its_reference():
    rs = complex_spacing_ratios(reference_spectrum(GINUE, 500, seed=2))
    assert rs.mean_abs == pytest.approx(0.74, abs=0.03)
    assert rs.nearest_reference() == GINUE


def test_ratios_ignore_shift_rotation_and_scale():
    z = reference_spectrum(POISSON, 300, seed=4)
    base = complex_spacing_ratios(z).ratios
    moved = complex_spacing_ratios(np.exp(0.7j) * z + (2 - 1j)).ratios
    scaled = complex_spacing_ratios(3.5 * z).ratios
    assert np.allclose(base, moved)
    assert np.allclose(np.abs(base), np.abs(scaled))


def test_open_chain_spectrum_contains_the_steady_state():
    spec = default_ness_model(6)
    prop = build_open_propagator(spec.weights, spec.driving, 6)
    lam = propagator_spectrum(prop.full)
    assert lam.size == 64
    assert np.min(np.abs(lam - 1)) < 1e-9
    assert np.max(np.abs(lam)) == pytest.approx(1, abs=1e-9)
    rs = complex_spacing_ratios(lam, label="rca54-open-N6")
    assert np.all(np.abs(rs.ratios) <= 1 + 1e-12)


# ---------------- files ----------------
def test_scan_and_ratio_files(tmp_path):
    records, fit = digit_complexity_scan(lambda N: F(1, 2 ** N), [2, 4, 6, 8, 10])
    save_digit_scan(records, fit, tmp_path / "digits.csv")
    assert (tmp_path / "digits.csv").read_text().splitlines()[0] == "N,digits,value_num_digits,value"
    assert json.loads((tmp_path / "digits.fit.json").read_text())["law"] == fit.law

    rs = complex_spacing_ratios([0, 1, 2, 3j])
    save_spacing_ratios(rs, tmp_path / "ratios.csv")
    summary = json.loads((tmp_path / "ratios.summary.json").read_text())
    assert summary["count"] == 4

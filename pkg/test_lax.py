from fractions import Fraction as F

import numpy as np
import pytest
from sympy import Poly

from charges.schemas import H_TILDE, CorrectionField, GluedDensity
from charges.tower import build_tower, q3_sum, q5_sum
from lax.intertwiner import (_certify, holds_exactly, intertwiner_from_table, lift_checked, rll_residual,
                             solve_intertwiner)
from lax.io import load_lax_series, load_table, save_lax_series, save_table
from lax.perturbative import (commutes_through_order, lax_support, perturbative_lax,
                              solve_entries_order_by_order)
from lax.resum import EXTEND_ORDERS, resum_entries
from lax.schemas import (A_OPERATOR, ALGEBRAIC, LAX_LAYOUT, PADE, POLYNOMIAL, R_MATRIX, RATIO, SERIES,
                         TRANSFER, Intertwiner, IntertwinerError, LaxSeries)
from lax.transfer import (checked_to_lax, lax_to_checked, log_derivative_charges, routing, shift_batch,
                          transfer_apply, transfer_series)
from lax.verify import verify_commutations
from linalg.modular import prime_stream
from linalg.operator import Operator, face_mask
from linalg.scalars import REAL
from linalg.series import U, AlgebraicEntry, PowerSeries, RationalFunction, poly_series
from model.propagators import glued_shift, periodic_propagator_sum
from model.schemas import FaceWeights


def random_face(seed, density=0.05):
    rng = np.random.default_rng(seed)
    vals = rng.integers(-3, 4, size=(64, 64))
    keep = (rng.random((64, 64)) < density) & face_mask(64)
    entries = {(r, c): F(int(vals[r, c])) for r, c in zip(*np.nonzero(keep)) if vals[r, c]}
    return Operator.from_entries(entries, LAX_LAYOUT)


def identity_lax(order):
    one = Operator.identity(LAX_LAYOUT)
    zero = Operator.zeros(LAX_LAYOUT)
    return LaxSeries(PowerSeries([one] + [zero] * order, order), frozenset((i, i) for i in range(64)))


def qq(*coeffs):
    """Poly in u from ascending coefficients."""
    return Poly(list(reversed(coeffs)), U, domain="QQ")


@pytest.fixture
def synthetic():
    """
    Diagonal ones, a Pade entry at (5,5), its multiple at (4,16), an entry at (0,0)
    fixed by the one-site transfer matrix and a square-root entry at (1,1).
    """
    order = 12
    pade_form = RationalFunction(qq(1, 2), qq(1, -1, -1))
    ratio_form = RationalFunction(qq(0, 1, 2), qq(1, 2, -4, -3))
    root_form = AlgebraicEntry(qq(1), qq(1), qq(1, 4), qq(2))
    series = {(i, i): poly_series(qq(1), order) for i in range(64)}
    series[(5, 5)] = pade_form.taylor(order)
    series[(4, 16)] = ratio_form.taylor(order)
    series[(0, 0)] = poly_series(qq(1, 1, 1), order) - ratio_form.taylor(order)
    series[(1, 1)] = root_form.taylor(order)
    coeffs = [Operator.from_entries({k: s[n] for k, s in series.items()}, LAX_LAYOUT) for n in range(order + 1)]
    return LaxSeries(PowerSeries(coeffs, order), frozenset(series))


def test_routing_is_a_permutation_and_checked_form_inverts_it():
    P = routing()
    assert (P @ P.transpose() - Operator.identity(LAX_LAYOUT)).is_zero()
    X = random_face(1)
    assert (lax_to_checked(checked_to_lax(X)) - X).is_zero()


def test_zero_order_transfer_is_the_two_site_shift():
    t = transfer_series(identity_lax(0), 6, 0)
    shift = glued_shift(3, 2)
    assert (t.series[0] - Operator(shift.data, (2,) * 6, shift.domain)).is_zero()


def test_identity_perturbation_gives_a_constant_transfer_matrix():
    t = transfer_series(identity_lax(2), 6, 2, REAL)
    assert t.series[1].is_zero(1e-12)
    assert t.series[2].is_zero(1e-12)


def test_transfer_needs_an_even_ring_and_enough_orders():
    lax = identity_lax(1)
    v = np.ones((1, 64))
    with pytest.raises(ValueError):
        transfer_apply(lax, v, 7)
    with pytest.raises(ValueError):
        transfer_apply(lax, v, 6, order=3)


def test_perturbative_lax_starts_with_h_and_reduces_to_the_exponential():
    h = random_face(2)
    lax = perturbative_lax(h)
    assert (lax.coefficient(1) - h).is_zero()
    assert (lax.coefficient(2) - (h @ h).scale(F(1, 2))).is_zero()
    assert (lax.coefficient(3) - (h @ h @ h).scale(F(1, 6))).is_zero()


def test_support_holds_identity_and_generator():
    h = random_face(3, density=0.02)
    support = lax_support(h)
    assert {(i, i) for i in range(64)} <= support
    assert h.pattern() <= support
    assert all(not ((r ^ c) & 0b100001) for r, c in support)


def test_first_log_derivative_is_the_glued_q6():
    h = random_face(4)
    lax = perturbative_lax(h)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 4 ** 4))
    t0v, t1v = transfer_apply(lax, v, 8, 1)
    assert np.allclose(t0v, shift_batch(v, 4, 2))
    expected = q3_sum(GluedDensity(h), 4).apply(v)
    assert np.allclose(shift_batch(t1v, 4, -2), expected, atol=1e-9)


def test_second_log_derivative_is_the_next_charge():
    h = random_face(5, density=0.03)
    ht = random_face(6, density=0.03)
    lax = perturbative_lax(h, ht)
    rng = np.random.default_rng(1)
    v = rng.standard_normal((2, 4 ** 5))
    _, t1v, t2v = transfer_apply(lax, v, 10, 2)
    q3v = shift_batch(t1v, 5, -2)
    q3q3v = shift_batch(transfer_apply(lax, q3v, 10, 1)[1], 5, -2)
    q5v = 2 * shift_batch(t2v, 5, -2) - q3q3v
    expected = q5_sum(GluedDensity(h), CorrectionField(H_TILDE, GluedDensity(ht)), 5).apply(v)
    assert np.allclose(q5v, expected, atol=1e-8)


def test_full_log_derivative_on_a_short_ring():
    h = random_face(7, density=0.03)
    t = transfer_series(perturbative_lax(h), 6, 2)
    q3, _ = log_derivative_charges(t)
    assert (q3 - q3_sum(GluedDensity(h), 3).to_operator()).is_zero()


def test_diagonal_generator_needs_no_higher_orders():
    h = Operator.from_entries({(i, i): F((i % 5) - 2) for i in range(64) if i % 5 != 2}, LAX_LAYOUT)
    lax = solve_entries_order_by_order(lax_support(h), h, 3)
    assert lax.order == 3
    assert (lax.coefficient(1) - h).is_zero()
    assert lax.coefficient(2).is_zero()
    assert lax.coefficient(3).is_zero()


def test_open_entries_are_solved_further_before_closing():
    h = Operator.from_entries({(i, i): F((i % 5) - 2) for i in range(64) if i % 5 != 2}, LAX_LAYOUT)
    lax = solve_entries_order_by_order(lax_support(h), h, 3)
    assert len(resum_entries(lax).unresolved()) == 64
    table = resum_entries(lax, h=h)
    assert table.order_solved == 3 + EXTEND_ORDERS
    assert table.counts()[POLYNOMIAL] == 64
    assert table.entries[(0, 0)].value(F(1, 2)) == 1 + F(1, 2) * F(-2)
    for key, e in table.entries.items():
        assert e.taylor(3) == lax.entry_series(key)


def test_resummation_classifies_every_entry(synthetic):
    table = resum_entries(synthetic, weights=FaceWeights.default())
    counts = table.counts()
    assert counts[POLYNOMIAL] == 61
    assert counts[PADE] == counts[RATIO] == counts[TRANSFER] == counts[ALGEBRAIC] == 1
    assert counts[SERIES] == 0
    assert table.entries[(5, 5)].tag == PADE
    assert table.entries[(4, 16)].tag == RATIO
    assert table.entries[(4, 16)].base == table.entries[(5, 5)].name
    assert table.entries[(0, 0)].tag == TRANSFER
    assert table.entries[(1, 1)].tag == ALGEBRAIC
    for key, e in table.entries.items():
        assert e.taylor(12) == synthetic.entry_series(key)


def test_square_root_entry_in_modular_images(synthetic):
    table = resum_entries(synthetic, weights=FaceWeights.default())
    assert abs(table.entries[(1, 1)].value(2.0) - 2.0) < 1e-12
    p = next(prime_stream())
    m = table.matrix_mod(F(2), p)
    assert int(m[1, 1]) in (2, p - 1)
    assert int(m[6, 6]) == 1
    non_residue = next(q for q in prime_stream() if pow(5, (q - 1) // 2, q) == q - 1)
    assert table.matrix_mod(F(1), non_residue) is None


def test_table_file(tmp_path, synthetic):
    table = resum_entries(synthetic, weights=FaceWeights.default())
    save_table(table, tmp_path / "lax.json")
    loaded = load_table(tmp_path / "lax.json")
    assert loaded.counts() == table.counts()
    assert loaded.weights == table.weights
    assert loaded.entries[(4, 16)].value(F(1, 3)) == table.entries[(4, 16)].value(F(1, 3))


def test_series_file_keeps_support(tmp_path):
    lax = perturbative_lax(random_face(8))
    save_lax_series(lax, tmp_path / "lax.series")
    loaded = load_lax_series(tmp_path / "lax.series")
    assert loaded.support == lax.support
    assert loaded.series == lax.series


def _float_face(seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return np.eye(64) + scale * rng.standard_normal((64, 64)) * face_mask(64)


def test_swap_intertwines_equal_points():
    checked = _float_face(9)
    assert rll_residual(np.eye(256), checked, checked) < 1e-10


def test_equal_points_have_an_intertwiner():
    checked = _float_face(10)
    found = solve_intertwiner(R_MATRIX, checked, checked, points=(F(1, 3), F(1, 3)))
    assert found.residual < 1e-8
    assert rll_residual(found.matrix, checked, checked) < 1e-8


def test_unrelated_lax_matrices_have_no_intertwiner():
    with pytest.raises(IntertwinerError) as err:
        solve_intertwiner(R_MATRIX, _float_face(11), _float_face(12))
    assert isinstance(err.value.certificate, dict)


def test_intertwiner_off_the_face_pattern_is_refused():
    assert _certify(R_MATRIX, np.eye(256), 0.0, (), 1).face_diagonal
    mixing = np.eye(256)
    mixing[0, 255] = 0.5
    with pytest.raises(IntertwinerError) as err:
        _certify(R_MATRIX, mixing, 0.0, (F(1, 6), F(2, 5)), 1)
    assert err.value.certificate["face_diagonal"] is False


def test_swap_holds_exactly_at_equal_points():
    h = Operator.from_entries({(i, i): F((i % 5) - 2) for i in range(64) if i % 5 != 2}, LAX_LAYOUT)
    table = resum_entries(solve_entries_order_by_order(lax_support(h), h, 3), h=h)
    swap = Intertwiner(R_MATRIX, (F(1, 3), F(1, 3)), 2 * np.eye(256), 0.0, 1.0, True)
    assert lift_checked(swap).trace() == 256
    assert holds_exactly(swap, table)
    irrational = swap.matrix.copy()
    irrational[0, 0] = np.sqrt(2)
    assert lift_checked(Intertwiner(R_MATRIX, swap.points, irrational, 0.0, 1.0, True)) is None
    assert not holds_exactly(Intertwiner(R_MATRIX, swap.points, irrational, 0.0, 1.0, True), table)


# ============================================================
# DESK-SCALE PIPELINES
# ============================================================
@pytest.fixture(scope="module")
def tower():
    return build_tower(FaceWeights.default(), depth=2)


@pytest.mark.slow
def test_perturbative_transfer_commutes_with_the_propagator_through_third_order(tower):
    lax = perturbative_lax(tower.h, tower.h_tilde, tower.h_tilde_tilde)
    checks = commutes_through_order(lax, periodic_propagator_sum(tower.weights, 8), 8)
    assert all(checks.values()), checks


@pytest.fixture(scope="module")
def order_six(tower):
    support = lax_support(tower.h, extra=[tower.h_tilde.op, tower.h_tilde_tilde.op])
    return solve_entries_order_by_order(support, tower.h, 6)


@pytest.mark.slow
def test_order_by_order_solve_keeps_q6_conserved(tower, order_six):
    assert (order_six.coefficient(1) - tower.h.op).is_zero()
    Q6 = q3_sum(tower.h, 4)
    assert all(commutes_through_order(order_six, Q6, 8).values())


@pytest.mark.slow
def test_lax_series_does_not_stop_at_third_order(order_six):
    fourth = order_six.coefficient(4)
    assert not fourth.is_zero()
    assert {(r, c) for r, c, _ in fourth.entries()} <= set(order_six.support)
    v = np.random.default_rng(4).standard_normal((2, 4 ** 4))
    t4 = transfer_apply(order_six, v, 8, 4)[4]
    assert np.abs(t4).max() > 1e-9


@pytest.mark.slow
def test_resummed_lax_and_intertwiners(tower):
    pinned = perturbative_lax(tower.h, tower.h_tilde, tower.h_tilde_tilde)
    support = lax_support(tower.h, extra=[tower.h_tilde.op, tower.h_tilde_tilde.op])
    lax = solve_entries_order_by_order(support, tower.h, 14, pinned=pinned)
    table = resum_entries(lax, weights=tower.weights, h=tower.h)
    assert table.counts()[POLYNOMIAL] >= 40
    assert table.unresolved() == []
    report = verify_commutations(table, N=8)
    assert report["passed"], report
    found = intertwiner_from_table(table, R_MATRIX, (F(2, 5), F(1, 6)))
    assert found.condition < 1e10
    a = intertwiner_from_table(table, A_OPERATOR, (F(1, 6),))
    assert holds_exactly(a, table)

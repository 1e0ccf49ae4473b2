import json
from fractions import Fraction as F

import numpy as np
import pytest

from linalg.exact import nullspace_exact
from linalg.operator import Operator, commutator, embed_sites
from model.gates import build_d_operator, build_face_gate, hopping_gate, injection_gate
from model.propagators import (build_open_propagator, build_periodic_propagator, build_six_vertex_propagator,
                               glued_shift, periodic_layers, propagator_from_d_chain, soliton_current_charge)
from model.schemas import (DETERMINISTIC_RCA54, GENERIC, STOCHASTIC, TRIVIAL, UNITARY, BoundaryDriving,
                           ChainGeometry, FaceWeights, SixVertexSpec, default_ness_model, dump_model_spec,
                           load_model_spec, stochastic_face_weights)


def column_sums(op: Operator):
    sums = {}
    for r, c, v in op.entries():
        sums[c] = sums.get(c, F(0)) + v
    return [sums.get(c, F(0)) for c in range(op.dim)]


def basis(dim, i):
    v = [F(0)] * dim
    v[i] = F(1)
    return v


@pytest.fixture
def deformed():
    return FaceWeights.default()


@pytest.fixture
def ness_params():
    spec = default_ness_model(4)
    return spec.weights, spec.driving


# ---------------- weights ----------------
def test_classify_named_points():
    assert FaceWeights.rca54().classify() >= {DETERMINISTIC_RCA54, STOCHASTIC}
    assert TRIVIAL in FaceWeights.parse(0, 1, 1, 0).classify()
    assert FaceWeights.default().classify() == {GENERIC}
    assert STOCHASTIC in stochastic_face_weights("1/3", "2/5").classify()
    assert UNITARY in FaceWeights(0.6, 0.8, -0.8, 0.6).classify()


def test_parse_refuses_floats_and_bad_driving():
    with pytest.raises(ValueError):
        BoundaryDriving.parse("0", "1/2", "1/2", "1/2")
    with pytest.raises(ValueError):
        ChainGeometry(5)
    with pytest.raises(ValueError):
        FaceWeights.parse("1/2", "1/0", "0", "1")


def test_model_spec_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"alpha": "1/7", "beta": "1/2", "gamma": "1/8", "delta": "3/11", "N": 8,
                                "boundary": "periodic"}))
    spec = load_model_spec(path)
    assert spec.weights == FaceWeights.default()
    assert spec.geometry.N == 8
    dump_model_spec(spec, tmp_path / "again.json")
    assert json.loads((tmp_path / "again.json").read_text())["delta"] == "3/11"


# ---------------- gates ----------------
def test_undeformed_gate_flips_middle_next_to_a_one():
    gate = build_face_gate(FaceWeights.rca54())
    assert gate.apply(basis(8, 0b001)) == basis(8, 0b011)
    assert gate.apply(basis(8, 0b000)) == basis(8, 0b000)
    assert gate.apply(basis(8, 0b111)) == basis(8, 0b101)


def test_deformed_gate_rows(deformed):
    # <000| U = alpha <000| + beta <010| and <010| U = gamma <000| + delta <010|
    gate = build_face_gate(deformed)
    row0 = gate.transpose().apply(basis(8, 0b000))
    row2 = gate.transpose().apply(basis(8, 0b010))
    assert row0[0] == F(1, 7) and row0[2] == F(1, 2)
    assert row2[0] == F(1, 8) and row2[2] == F(3, 11)
    assert sum(1 for v in row0 if v) == 2


def test_stochastic_gate_column_sums():
    gate = build_face_gate(stochastic_face_weights("30/101", "40/49"))
    assert column_sums(gate) == [F(1)] * 8


def test_hopping_and_injection_gates():
    g = hopping_gate(F(1, 3))
    assert g.get(1, 1) == F(3, 4) and g.get(1, 2) == F(1, 4)
    assert g.get(0, 0) == 1 and g.get(3, 3) == 1
    assert (hopping_gate(F(0)) - Operator.identity((2, 2))).is_zero()
    assert column_sums(injection_gate(F(1, 4), F(3, 5))) == [F(1), F(1)]


def test_boundary_gates_are_stochastic(ness_params):
    from model.gates import left_boundary_gate, right_boundary_gate
    _, drv = ness_params
    for gate in (left_boundary_gate(drv), right_boundary_gate(drv)):
        assert column_sums(gate) == [F(1)] * 4
        assert all(v >= 0 for _, _, v in gate.entries())


# ---------------- periodic chain ----------------
def test_undeformed_propagator_is_permutation():
    U = build_periodic_propagator(FaceWeights.rca54(), 6).full
    assert all(v == 1 for _, _, v in U.entries())
    rows = [r for r, _, _ in U.entries()]
    cols = [c for _, c, _ in U.entries()]
    assert sorted(rows) == list(range(64)) and sorted(cols) == list(range(64))


def test_stochastic_periodic_column_sums():
    U = build_periodic_propagator(stochastic_face_weights("1/3", "2/7"), 6).full
    assert column_sums(U) == [F(1)] * 64


def test_layer_gates_commute(deformed):
    even, odd = periodic_layers(deformed, 6)
    for layer in (even, odd):
        ops = [embed_sites(pl.op, pl.sites, (2,) * 6) for pl in layer]
        for i in range(len(ops)):
            for j in range(i + 1, len(ops)):
                assert commutator(ops[i], ops[j]).is_zero()


def test_soliton_current_is_conserved(deformed):
    J = soliton_current_charge(6)
    U = build_periodic_propagator(deformed, 6).full
    assert commutator(U, J).is_zero()
    random_weights = FaceWeights.parse("5/13", "-2/9", "7/3", "1/17")
    assert commutator(build_periodic_propagator(random_weights, 6).full, J).is_zero()


def test_soliton_current_values():
    J = soliton_current_charge(4)
    assert J.get(0, 0) == 0
    assert J.get(0b1100, 0b1100) == 4
    assert J.is_diagonal()
    with pytest.raises(ValueError):
        soliton_current_charge(5)


def test_unitary_propagator():
    w = FaceWeights(0.6, 0.8, -0.8, 0.6)
    U = build_periodic_propagator(w, 4).full
    assert (U.dagger() @ U).allclose(Operator.identity((2,) * 4, U.domain))


def test_periodic_rejects_odd_chain(deformed):
    with pytest.raises(ValueError):
        build_periodic_propagator(deformed, 5)


# ---------------- glued picture ----------------
def test_d_chain_rebuilds_propagator(deformed):
    U = build_periodic_propagator(deformed, 6).full
    assert (propagator_from_d_chain(deformed, 6) - U).is_zero()


def test_checked_d_operator_is_face_diagonal(deformed):
    from linalg.operator import is_face_diagonal
    assert is_face_diagonal(build_d_operator(deformed, checked=True))


def test_glued_shift_cycles():
    S = glued_shift(3, 1)
    # |x1 x2 x3> -> |x3 x1 x2>
    assert S.apply(basis(64, 4 * 1 + 2))[16 * 2 + 0 + 1] == 1
    assert (S @ S @ S - Operator.identity((4,) * 3)).is_zero()
    assert (S @ glued_shift(3, -1) - Operator.identity((4,) * 3)).is_zero()


# ---------------- open chain ----------------
def test_open_chain_has_unique_steady_state(ness_params):
    w, drv = ness_params
    U = build_open_propagator(w, drv, 4).full
    assert U.dim == 16
    assert column_sums(U) == [F(1)] * 16
    assert len(nullspace_exact(U - Operator.identity((2,) * 4))) == 1


def test_open_chain_undeformed_bulk_is_deterministic(ness_params):
    _, drv = ness_params
    w = stochastic_face_weights("0", "0")
    gate = build_face_gate(w)
    assert all(v == 1 for _, _, v in gate.entries())
    U = build_open_propagator(w, drv, 6).full
    assert column_sums(U) == [F(1)] * 64


def test_open_chain_needs_stochastic_bulk(ness_params, deformed):
    _, drv = ness_params
    with pytest.raises(ValueError):
        build_open_propagator(deformed, drv, 4)


# ---------------- six-vertex model ----------------
def test_six_vertex_propagator_is_stochastic():
    s = SixVertexSpec(F(1, 3), F(1, 3), F(1, 4), F(3, 5), F(3, 4), F(2, 7), 2)
    U = build_six_vertex_propagator(s).full
    assert U.dim == 2 ** 5
    assert column_sums(U) == [F(1)] * 32
    with pytest.raises(ValueError):
        SixVertexSpec(F(-1), F(1, 3), F(1, 4), F(3, 5), F(3, 4), F(2, 7), 2)


def test_six_vertex_staggered_propagator():
    s = SixVertexSpec(F(1, 2), F(1, 3), F(1, 4), F(3, 5), F(3, 4), F(2, 7), 1)
    U = build_six_vertex_propagator(s).full
    assert np.allclose(U.to_float().sum(axis=0), 1.0)

import json
from fractions import Fraction as F
from unittest.mock import MagicMock, patch

import pandas as pd
import pytest

from cli.run import build_parser, config_from_args, main, run
from cli.schemas import FAILURE_REPORT_NAME, MANIFEST_NAME, NESS_MPA, NO_CHECKS, RunConfig, RunResult
from lax.schemas import A_OPERATOR, R_MATRIX, IntertwinerError
from linalg.scalars import format_rational
from model.propagators import build_open_propagator
from model.schemas import ChainGeometry, ModelSpec, default_ness_model, dump_model_spec, stochastic_face_weights
from ness.brute import brute_force_ness, gap_probability
from ness.schemas import SingularParametersError
from sampler.render import read_pbm


@pytest.fixture
def ness_model(tmp_path):
    path = tmp_path / "ness.json"
    dump_model_spec(default_ness_model(4), path)
    return path


@pytest.fixture
def ring_model(tmp_path):
    path = tmp_path / "ring.json"
    dump_model_spec(ModelSpec(stochastic_face_weights("1/3", "2/5"), ChainGeometry(8)), path)
    return path


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def test_unknown_subcommand_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_malformed_config_is_refused():
    with pytest.raises(ValueError):
        RunConfig("bogus")
    with pytest.raises(ValueError):
        RunConfig(NESS_MPA, domain="decimal")


def test_arguments_map_onto_the_run_config():
    args = build_parser().parse_args(["ness-mpa", "--levels", "3", "--no-verify", "--seed", "5"])
    cfg = config_from_args(args)
    assert cfg.subcommand == NESS_MPA and cfg.seed == 5 and cfg.domain == "exact"
    assert cfg.options["levels"] == 3 and cfg.options["no_verify"] is True
    assert "seed" not in cfg.options


def test_ness_brute_end_to_end(tmp_path, ness_model):
    out = tmp_path / "run" / "ness.csv"
    assert main(["ness-brute", "--model", str(ness_model), "--out", str(out)]) == 0
    df = pd.read_csv(out, dtype=str)
    assert list(df.columns) == ["configuration", "p", "p_prime"]
    assert len(df) == 16

    manifest = read_json(out.parent / MANIFEST_NAME)
    assert manifest["config"]["subcommand"] == "ness-brute"
    assert set(manifest["versions"]) >= {"package", "python", "numpy", "sympy"}
    assert "timestamp" in manifest
    spec = default_ness_model(4)
    prop = build_open_propagator(spec.weights, spec.driving, 4)
    gap = gap_probability(brute_force_ness(prop.even, prop.odd))
    assert manifest["result"]["summary"]["gap_probability"] == format_rational(gap)
    assert all(manifest["result"]["checks"].values())
    assert not (out.parent / FAILURE_REPORT_NAME).exists()


def test_simulate_is_reproducible(tmp_path, ring_model):
    outs = [tmp_path / "a" / "traj.pbm", tmp_path / "b" / "traj.pbm"]
    for out in outs:
        code = main(["simulate", "--model", str(ring_model), "--steps", "5", "--seed", "11",
                     "--init", "light-cone:4", "--png", "--out", str(out)])
        assert code == 0
    assert outs[0].read_text() == outs[1].read_text()
    assert read_pbm(outs[0]).shape == (11, 8)
    assert outs[0].with_suffix(".png").exists()


def test_failed_checks_give_exit_one_and_a_report(tmp_path):
    fake = MagicMock(return_value=RunResult(NESS_MPA, {"level_1": True, "level_2": False}))
    with patch.dict("cli.run.PIPELINES", {NESS_MPA: fake}):
        code = run(RunConfig(NESS_MPA, out=str(tmp_path / "mpa.json")))
    assert code == 1
    report = read_json(tmp_path / FAILURE_REPORT_NAME)
    assert report["subcommand"] == NESS_MPA
    assert report["error_type"] == "CheckFailedError"
    assert report["failed_checks"] == ["level_2"]
    assert read_json(tmp_path / MANIFEST_NAME)["result"]["passed"] is False


def test_pipeline_errors_give_exit_one_and_a_report(tmp_path, ness_model):
    with patch("cli.commands.solve_levels_exact", side_effect=SingularParametersError("beta = gamma = 0")):
        code = main(["ness-mpa", "--model", str(ness_model), "--out", str(tmp_path / "mpa.json")])
    assert code == 1
    report = read_json(tmp_path / FAILURE_REPORT_NAME)
    assert report["error_type"] == "SingularParametersError"
    assert "beta" in report["message"]
    assert (tmp_path / MANIFEST_NAME).exists()


def test_float_domain_keeps_the_float_recursion(tmp_path, ness_model):
    with patch("cli.commands.solve_levels", side_effect=SingularParametersError("float path")) as float_path, \
            patch("cli.commands.solve_levels_exact") as exact_path:
        code = main(["ness-mpa", "--domain", "float", "--model", str(ness_model), "--out", str(tmp_path / "mpa.json")])
    assert code == 1
    float_path.assert_called_once()
    exact_path.assert_not_called()


def test_exact_only_pipelines_refuse_floats(tmp_path):
    code = main(["digit-complexity", "--domain", "float", "--out", str(tmp_path / "dc.csv")])
    assert code == 1
    assert read_json(tmp_path / FAILURE_REPORT_NAME)["error_type"] == "ValueError"


def _intertwiner(kind, residual=1e-12):
    found = MagicMock(kind=kind, residual=residual)
    found.to_json.return_value = {"kind": kind}
    return found


def test_float_residuals_are_judged_against_the_tolerance(tmp_path):
    table = MagicMock()
    table.unresolved.return_value = []
    report = {"N": 8, "mode": "float", "checks": {"[t,U]": 1e-13, "[t(u),t(v)]": 1e-3}, "passed": False}
    with patch("cli.commands.load_table", return_value=table), \
            patch("cli.commands.verify_commutations", return_value=report) as verify, \
            patch("cli.commands.intertwiner_from_table", side_effect=[_intertwiner(R_MATRIX), _intertwiner(A_OPERATOR)]):
        code = main(["lax-verify", "--table", "lax.json", "--domain", "float", "--points", "1/6,2/5",
                     "--out", str(tmp_path / "intertwiners.json")])
    assert code == 1
    assert verify.call_args[0][2] == [F(1, 6), F(2, 5)]
    assert read_json(tmp_path / FAILURE_REPORT_NAME)["failed_checks"] == ["[t(u),t(v)]"]


def test_intertwiners_are_checked_even_when_commutators_fail(tmp_path):
    table = MagicMock()
    table.unresolved.return_value = [MagicMock()]
    report = {"N": 8, "mode": "exact", "checks": {"[t,U]": False}, "passed": False}
    missing = IntertwinerError("A_operator: no invertible solution", {"condition": 1e12})
    with patch("cli.commands.load_table", return_value=table), \
            patch("cli.commands.verify_commutations", return_value=report), \
            patch("cli.commands.intertwiner_from_table", side_effect=[_intertwiner(R_MATRIX), missing]) as solve:
        code = main(["lax-verify", "--table", "lax.json", "--out", str(tmp_path / "intertwiners.json")])
    assert code == 1
    assert [c.args[1] for c in solve.call_args_list] == [R_MATRIX, A_OPERATOR]
    failed = read_json(tmp_path / FAILURE_REPORT_NAME)["failed_checks"]
    assert failed == ["[t,U]", "entries_resolved", f"{A_OPERATOR}_found"]
    saved = read_json(tmp_path / "intertwiners.json")
    assert saved == [{"kind": R_MATRIX}]


def test_a_pipeline_without_checks_does_not_pass(tmp_path):
    fake = MagicMock(return_value=RunResult(NESS_MPA, {}))
    with patch.dict("cli.run.PIPELINES", {NESS_MPA: fake}):
        code = run(RunConfig(NESS_MPA, out=str(tmp_path / "mpa.json")))
    assert code == 1
    assert read_json(tmp_path / FAILURE_REPORT_NAME)["failed_checks"] == [NO_CHECKS]
    assert RunResult(NESS_MPA).failed == [NO_CHECKS]


def test_find_charges_declares_its_checks(tmp_path, ring_model):
    out = tmp_path / "q4.op"
    assert main(["find-charges", "--model", str(ring_model), "--range", "4", "--out", str(out)]) == 0
    result = read_json(tmp_path / MANIFEST_NAME)["result"]
    assert result["checks"] == {"commutant_nonempty": True}
    assert result["summary"]["non_diagonal_found"] is False


def test_digit_complexity_csv(tmp_path):
    out = tmp_path / "dc.csv"
    assert main(["digit-complexity", "--family", "sixvertex", "--Nmax", "5", "--burn-in", "0",
                 "--out", str(out)]) == 0
    df = pd.read_csv(out, dtype=str)
    assert list(df.columns) == ["N", "digits", "value_num_digits", "value"]
    assert df["N"].tolist() == ["3", "5"]


def test_spectrum_of_a_reference_ensemble(tmp_path):
    out = tmp_path / "ratios.csv"
    assert main(["spectrum", "--reference", "poisson", "--size", "400", "--seed", "3", "--out", str(out)]) == 0
    summary = read_json(tmp_path / "ratios.summary.json")
    assert summary["count"] == 400
    assert summary["label"] == "poisson"

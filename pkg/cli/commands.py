import logging
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from charges.commutant import commutes_exactly, find_commutant, select_generator
from charges.density import extensive_sum
from charges.io import save_density, save_tower
from charges.schemas import LEFT_ALIGNED
from charges.tower import build_tower, verify_tower
from cli.schemas import (DIGIT_COMPLEXITY, FIND_CHARGES, LAX_BUILD, LAX_VERIFY, NESS_BRUTE, NESS_MPA, SIMULATE,
                         SPECTRUM, VERIFY_CHARGES, RunConfig, RunResult)
from diagnostics.digits import SIX_VERTEX_UNIFORM, ansatz_gap, digit_complexity_scan, six_vertex_gap
from diagnostics.io import save_digit_scan, save_spacing_ratios
from diagnostics.spectrum import complex_spacing_ratios, propagator_spectrum, reference_spectrum
from lax.intertwiner import intertwiner_from_table
from lax.io import load_table, save_intertwiners, save_lax_series, save_table
from lax.perturbative import lax_support, perturbative_lax, solve_entries_order_by_order
from lax.resum import resum_entries
from lax.schemas import A_OPERATOR, R_MATRIX, IntertwinerError
from lax.verify import DEFAULT_POINTS, FLOAT_TOL, verify_commutations
from linalg.scalars import format_rational, parse_rational
from model.propagators import build_open_propagator, build_periodic_propagator, periodic_propagator_sum
from model.schemas import OPEN, PERIODIC, ChainGeometry, FaceWeights, ModelSpec, default_ness_model, load_model_spec
from ness.brute import brute_force_ness, gap_probability
from ness.io import save_level_report, save_mpa, save_ness_csv
from ness.levels import solve_levels, solve_levels_exact
from ness.mpa import mpa_contract
from sampler.render import render_png, write_pbm
from sampler.trajectory import sample_trajectory

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
DEFAULT_RING = 8
RATIO_BOUND = 1 + 1e-12

Pipeline = Callable[[RunConfig], RunResult]


# ============================================================
# HELPERS
# ============================================================
def _model(cfg: RunConfig, driven: bool = False) -> ModelSpec:
    if cfg.model is not None:
        spec = load_model_spec(cfg.model)
    elif driven:
        spec = default_ness_model(int(cfg.options.get("N") or 6))
    else:
        spec = ModelSpec(FaceWeights.default(), ChainGeometry(DEFAULT_RING, PERIODIC))
    N = cfg.options.get("N")
    if N is not None and N != spec.geometry.N:
        spec = ModelSpec(spec.weights, ChainGeometry(int(N), spec.geometry.boundary), spec.driving, spec.extra)
    if driven and spec.driving is None:
        raise ValueError("This pipeline needs a driven model with boundary parameters a, b, c, d")
    return spec


def _weights(cfg: RunConfig, w: FaceWeights) -> FaceWeights:
    return w if cfg.exact else FaceWeights(*(float(v) for v in w.as_tuple()))


def _require_exact(cfg: RunConfig, what: str) -> None:
    if not cfg.exact:
        raise ValueError(f"{what} is only defined in exact arithmetic")


def _out(cfg: RunConfig, default: str) -> Path:
    path = Path(cfg.out or default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _rationals(text: Optional[str]) -> List[Fraction]:
    return [parse_rational(t) for t in text.split(",")] if text else []


# ============================================================
# PIPELINES
# ============================================================
def run_simulate(cfg: RunConfig) -> RunResult:
    spec = _model(cfg)
    steps = int(cfg.options["steps"])
    traj = sample_trajectory(_weights(cfg, spec.weights), spec.geometry, cfg.options.get("init", "all-zero"),
                             steps, cfg.seed, spec.driving, int(cfg.options.get("index", 0)))
    out = _out(cfg, "traj.pbm")
    write_pbm(traj, out)
    outputs = [str(out)]
    if cfg.options.get("png"):
        png = out.with_suffix(".png")
        render_png(traj, png, int(cfg.options.get("scale", 4)))
        outputs.append(str(png))
    checks = {
        "binary": bool(np.isin(traj.frames, (0, 1)).all()),
        "frames": traj.frames.shape == (2 * steps + 1, spec.geometry.N),
    }
    return RunResult(SIMULATE, checks, outputs, {"steps": steps, "N": spec.geometry.N})


def run_find_charges(cfg: RunConfig) -> RunResult:
    spec = _model(cfg)
    r = int(cfg.options.get("range", 6))
    N = max(spec.geometry.N, r + 2 + (r % 2))
    U = periodic_propagator_sum(_weights(cfg, spec.weights), N)
    basis = find_commutant(U, r, int(cfg.options.get("shift_period", 2)), cfg.options.get("gauge", LEFT_ALIGNED),
                           seed=cfg.seed)
    generator = select_generator(basis)
    out = _out(cfg, f"q{r}.op")
    outputs = []
    if generator is not None:
        save_density(generator, out)
        outputs.append(str(out))
    else:
        logger.info(f"No non-diagonal range-{r} density; nothing written to {out}")
    checks = {"commutant_nonempty": bool(basis)}
    if generator is not None and cfg.exact:
        checks["generator_commutes"] = commutes_exactly(extensive_sum(generator, N), U, cfg.seed)
    summary = {"range": r, "N": N, "basis": len(basis), "diagonal": sum(q.is_diagonal() for q in basis),
               "non_diagonal_found": generator is not None}
    return RunResult(FIND_CHARGES, checks, outputs, summary)


def run_verify_charges(cfg: RunConfig) -> RunResult:
    _require_exact(cfg, "Charge commutator verification")
    spec = _model(cfg)
    N = cfg.options.get("N")
    tower = build_tower(spec.weights, int(cfg.options.get("depth", 2)), cfg.seed)
    tower.checks = verify_tower(tower, int(N) if N else None, cfg.seed)
    outputs = []
    if cfg.out:
        save_tower(tower, cfg.out)
        outputs.append(cfg.out)
    return RunResult(VERIFY_CHARGES, dict(tower.checks), outputs, {"weights": spec.weights.to_json()})


def run_lax_build(cfg: RunConfig) -> RunResult:
    spec = _model(cfg)
    orders = int(cfg.options.get("orders", 12))
    tower = build_tower(spec.weights, 2, cfg.seed)
    extra = [f.op for f in (tower.h_tilde, tower.h_tilde_tilde)]
    pinned = perturbative_lax(tower.h, tower.h_tilde, tower.h_tilde_tilde)
    lax = solve_entries_order_by_order(lax_support(tower.h, extra=extra), tower.h, orders, pinned=pinned,
                                       seed=cfg.seed)
    out = _out(cfg, "lax.json")
    series_path = out.with_suffix(".series")
    save_lax_series(lax, series_path)
    outputs = [str(series_path)]
    checks = {"order_reached": lax.order >= orders}
    summary = {"order": lax.order, "support": len(lax.support),
               "free_parameters": sum(lax.free_parameters.values())}
    if cfg.options.get("resum"):
        table = resum_entries(lax, weights=spec.weights, h=tower.h, seed=cfg.seed)
        save_table(table, out)
        outputs.append(str(out))
        checks["all_entries_closed"] = not table.unresolved()
        summary["counts"] = table.counts()
    return RunResult(LAX_BUILD, checks, outputs, summary)


def run_lax_verify(cfg: RunConfig) -> RunResult:
    table = load_table(cfg.options["table"])
    if table.weights is None:
        raise ValueError(f"{cfg.options['table']} carries no face weights")
    points = _rationals(cfg.options.get("points")) or list(DEFAULT_POINTS)
    report = verify_commutations(table, int(cfg.options.get("N") or DEFAULT_RING), points, cfg.exact, cfg.seed)
    checks = {k: bool(v) if isinstance(v, (bool, np.bool_)) else bool(v < FLOAT_TOL)
              for k, v in report["checks"].items()}
    checks["entries_resolved"] = not table.unresolved()
    summary = {k: v for k, v in report.items() if k not in ("checks", "passed")}
    summary["residuals"] = report["checks"]
    v, u = points[1], points[0]
    found = []
    for kind, at in ((R_MATRIX, (v, u)), (A_OPERATOR, (u,))):
        try:
            x = intertwiner_from_table(table, kind, at, cfg.seed)
        except IntertwinerError as e:
            logger.error(f"{kind}: {e}")
            checks[f"{kind}_found"] = False
            summary[f"{kind}_certificate"] = e.certificate
            continue
        checks[f"{kind}_residual"] = x.residual < FLOAT_TOL
        found.append(x)
    outputs = []
    if cfg.out and found:
        save_intertwiners(found, _out(cfg, "intertwiners.json"))
        outputs.append(cfg.out)
    return RunResult(LAX_VERIFY, checks, outputs, summary)


def run_ness_brute(cfg: RunConfig) -> RunResult:
    spec = _model(cfg, driven=True)
    N = spec.geometry.N
    prop = build_open_propagator(_weights(cfg, spec.weights), spec.driving, N)
    pair = brute_force_ness(prop.even, prop.odd, exact=cfg.exact)
    out = _out(cfg, "ness.csv")
    save_ness_csv(pair, out)
    gap = gap_probability(pair)
    return RunResult(NESS_BRUTE, pair.check(prop.even, prop.odd), [str(out)],
                     {"N": N, "gap_probability": format_rational(gap) if cfg.exact else gap})


def run_ness_mpa(cfg: RunConfig) -> RunResult:
    spec = _model(cfg, driven=True)
    levels = int(cfg.options.get("levels", 4))
    starts = int(cfg.options.get("starts") or 8)
    if cfg.exact:
        mpa, reports = solve_levels_exact(spec.weights, spec.driving, levels, cfg.seed, starts)
    else:
        mpa, reports = solve_levels(spec.weights, spec.driving, levels, cfg.seed, starts,
                                    not cfg.options.get("no_verify"))
    out = _out(cfg, "mpa.json")
    save_mpa(mpa, out, spec.weights, spec.driving)
    report_path = out.with_suffix(".levels.csv")
    save_level_report(reports, report_path)
    checks = {f"level_{r.level}": r.ok for r in reports}
    checks["reached"] = mpa.max_level >= levels
    summary = {"max_level": mpa.max_level, "seconds": [round(r.seconds, 3) for r in reports]}
    N = 2 * min(mpa.max_level, levels)
    if N >= 4:
        summary["N"] = N
        gap = gap_probability(mpa_contract(mpa, N).normalized())
        summary["gap_probability"] = format_rational(gap) if mpa.exact else float(gap)
    return RunResult(NESS_MPA, checks, [str(out), str(report_path)], summary)


def run_digit_complexity(cfg: RunConfig) -> RunResult:
    _require_exact(cfg, "Digit complexity")
    family = cfg.options.get("family", "rca54")
    n_max = int(cfg.options.get("Nmax", 10))
    if family == "sixvertex":
        params = cfg.options.get("params")
        observable = six_vertex_gap(params.split(",") if params else SIX_VERTEX_UNIFORM)
        sizes = range(3, n_max + 1, 2)
    elif family == "rca54":
        spec = _model(cfg, driven=True)
        observable = ansatz_gap(spec.weights, spec.driving, n_max, cfg.seed)
        sizes = range(4, n_max + 1, 2)
    else:
        raise ValueError(f"Unknown model family {family!r}")
    sizes = [N for N in sizes if N >= int(cfg.options.get("Nmin") or 0)]
    burn_in = int(cfg.options.get("burn_in", 2))
    records, fit = digit_complexity_scan(observable, sizes, burn_in, fit=len(sizes) - burn_in >= 3)
    out = _out(cfg, "dc.csv")
    save_digit_scan(records, fit, out)
    checks = {"all_sizes": [r.N for r in records] == sorted(set(sizes))}
    if fit is not None:
        checks["growth_fit"] = bool(np.isfinite(fit.slope))
    summary = {"family": family, "sizes": [r.N for r in records], "law": fit.law if fit else None}
    return RunResult(DIGIT_COMPLEXITY, checks, [str(out)], summary)


def run_spectrum(cfg: RunConfig) -> RunResult:
    reference = cfg.options.get("reference")
    if reference:
        z = reference_spectrum(reference, int(cfg.options.get("size") or 1000), cfg.seed)
        label = reference
    else:
        spec = _model(cfg)
        w = _weights(cfg, spec.weights)
        N = spec.geometry.N
        if spec.geometry.boundary == OPEN:
            if spec.driving is None:
                raise ValueError("Open chains need boundary driving")
            U = build_open_propagator(w, spec.driving, N).full
        else:
            U = build_periodic_propagator(w, N).full
        z = propagator_spectrum(U)
        label = f"{spec.geometry.boundary}-N{N}"
    ratios = complex_spacing_ratios(z, label=label)
    out = _out(cfg, "ratios.csv")
    save_spacing_ratios(ratios, out)
    checks = {"bounded": bool(np.all(np.abs(ratios.ratios) <= RATIO_BOUND))}
    return RunResult(SPECTRUM, checks, [str(out)], ratios.to_json())


PIPELINES: Dict[str, Pipeline] = {
    SIMULATE: run_simulate,
    FIND_CHARGES: run_find_charges,
    VERIFY_CHARGES: run_verify_charges,
    LAX_BUILD: run_lax_build,
    LAX_VERIFY: run_lax_verify,
    NESS_BRUTE: run_ness_brute,
    NESS_MPA: run_ness_mpa,
    DIGIT_COMPLEXITY: run_digit_complexity,
    SPECTRUM: run_spectrum,
}

import argparse
import logging
from typing import List, Optional

from charges.schemas import GAUGES, LEFT_ALIGNED
from cli.commands import PIPELINES
from cli.schemas import (DIGIT_COMPLEXITY, DOMAINS, EXACT, FIND_CHARGES, LAX_BUILD, LAX_VERIFY, NESS_BRUTE, NESS_MPA,
                         NO_CHECKS, SIMULATE, SPECTRUM, VERIFY_CHARGES, CheckFailedError, RunConfig,
                         write_failure_report, write_manifest)
from diagnostics.schemas import GINUE, POISSON

logger = logging.getLogger(__name__)

# options that belong to RunConfig itself rather than to one pipeline
_COMMON = {"subcommand", "model", "domain", "seed", "out", "verbose"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rca54", description="Deformed rule-54 automaton lab")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--domain", choices=DOMAINS, default=EXACT)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file or folder")
    common.add_argument("--verbose", action="store_true", help="DEBUG logging")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(SIMULATE, parents=[common], help="sample a stochastic trajectory")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--init", default="all-zero", help="all-zero | bernoulli:RHO | light-cone:W | bit-string")
    p.add_argument("--index", type=int, default=0, help="trajectory index within the seed's stream")
    p.add_argument("--png", action="store_true", help="also write a PNG preview")
    p.add_argument("--scale", type=int, default=4)

    p = sub.add_parser(FIND_CHARGES, parents=[common], help="commutant of the propagator at one range")
    p.add_argument("--range", type=int, default=6)
    p.add_argument("--shift-period", type=int, default=2)
    p.add_argument("--gauge", choices=GAUGES, default=LEFT_ALIGNED)

    p = sub.add_parser(VERIFY_CHARGES, parents=[common], help="build the charge tower and check commutators")
    p.add_argument("--N", type=int)
    p.add_argument("--depth", type=int, choices=(1, 2), default=2)

    p = sub.add_parser(LAX_BUILD, parents=[common], help="order-by-order Lax entries, optionally resummed")
    p.add_argument("--orders", type=int, default=12)
    p.add_argument("--resum", action="store_true")

    p = sub.add_parser(LAX_VERIFY, parents=[common], help="transfer-matrix commutation checks and intertwiners")
    p.add_argument("--table", required=True, help="resummed Lax table JSON")
    p.add_argument("--N", type=int)
    p.add_argument("--points", help="comma separated rationals, e.g. 1/6,2/5")

    p = sub.add_parser(NESS_BRUTE, parents=[common], help="steady state by direct linear solve")
    p.add_argument("--N", type=int)

    p = sub.add_parser(NESS_MPA, parents=[common], help="level-by-level patch ansatz")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--starts", type=int)
    p.add_argument("--no-verify", action="store_true", help="skip brute-force checkpoints")

    p = sub.add_parser(DIGIT_COMPLEXITY, parents=[common], help="denominator digits of the gap probability")
    p.add_argument("--family", choices=("rca54", "sixvertex"), default="rca54")
    p.add_argument("--params", help="p,q,a,b,c,d of the six-vertex chain")
    p.add_argument("--Nmin", type=int)
    p.add_argument("--Nmax", type=int, default=10)
    p.add_argument("--burn-in", type=int, default=2)

    p = sub.add_parser(SPECTRUM, parents=[common], help="complex spacing ratios of the propagator")
    p.add_argument("--N", type=int)
    p.add_argument("--reference", choices=(POISSON, GINUE), help="sample a reference ensemble instead")
    p.add_argument("--size", type=int)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = vars(args)
    options = {k: v for k, v in values.items() if k not in _COMMON}
    return RunConfig(args.subcommand, args.model, args.domain, args.seed, args.out, options, args.verbose)


def run(config: RunConfig) -> int:
    """Runs one pipeline; 0 iff every declared check passed."""
    if config.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.info(f"Running {config.subcommand} with {config.to_json()}")
    try:
        result = PIPELINES[config.subcommand](config)
        write_manifest(config, result)
        if not result.passed:
            raise CheckFailedError(f"Failed checks: {result.failed}", result.checks or {NO_CHECKS: False})
    except CheckFailedError as e:
        write_failure_report(config, e, e.checks)
        return 1
    except (RuntimeError, ValueError, KeyError, OSError) as e:
        write_manifest(config)
        write_failure_report(config, e, getattr(e, "checks", None))
        return 1
    logger.info(f"{config.subcommand} passed: {result.summary}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(config_from_args(args))

import logging
import time
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from diagnostics.schemas import EXPONENTIAL, LINEAR, QUADRATIC, DigitComplexityRecord, GrowthFit
from linalg.parallel import parallel_map
from model.propagators import build_open_propagator, build_six_vertex_propagator
from model.schemas import BoundaryDriving, FaceWeights, SixVertexSpec, default_ness_model
from ness.brute import EXACT_LIMIT, brute_force_ness, gap_probability
from ness.levels import solve_levels_exact
from ness.mpa import mpa_gap
from ness.schemas import PatchMPA

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
BURN_IN = 2
# (p, q, a, b, c, d) of the driven exclusion comparison chains
SIX_VERTEX_UNIFORM = ("1/3", "1/3", "1/4", "3/5", "3/4", "2/7")
SIX_VERTEX_STAGGERED = ("1/2", "1/3", "1/4", "3/5", "3/4", "2/7")

Observable = Callable[[int], Fraction]


def digit_complexity(value) -> int:
    """Decimal digits of the reduced denominator."""
    return len(str(Fraction(value).denominator))


# ============================================================
# MODEL FAMILIES
# ============================================================
def model_gap(w: FaceWeights, drv: BoundaryDriving, mpa: Optional[PatchMPA] = None) -> Observable:
    """
    Empty-chain probability of the driven chain on N sites; N must be even. Read off
    the exact patch ansatz when one is given, from the exact brute force otherwise.
    """
    if not w.is_exact:
        raise ValueError("Digit complexity needs rational parameters")
    if mpa is not None and not mpa.exact:
        raise ValueError("Digit complexity needs an exact ansatz")

    def observable(N: int) -> Fraction:
        if mpa is not None:
            return mpa_gap(mpa, N)
        prop = build_open_propagator(w, drv, N)
        return gap_probability(brute_force_ness(prop.even, prop.odd, exact=True))

    return observable


def ansatz_gap(w: FaceWeights, drv: BoundaryDriving, n_max: int, seed: int = 0) -> Observable:
    """model_gap through an exact ansatz lifted once to n_max / 2 levels."""
    if n_max <= EXACT_LIMIT:
        return model_gap(w, drv)
    mpa, _ = solve_levels_exact(w, drv, n_max // 2, seed=seed)
    logger.info(f"Exact ansatz with {mpa.max_level} levels covers chains up to N={2 * mpa.max_level}")
    return model_gap(w, drv, mpa)


def rca54_gap(N: int) -> Fraction:
    """model_gap at the default driven parameters."""
    spec = default_ness_model(N)
    return model_gap(spec.weights, spec.driving)(N)


def six_vertex_gap(params: Sequence[str] = SIX_VERTEX_UNIFORM) -> Observable:
    """Observable on 2*N_half + 1 sites; N must be odd."""
    p, q, a, b, c, d = (Fraction(v) for v in params)

    def observable(N: int) -> Fraction:
        if N % 2 == 0 or N < 3:
            raise ValueError(f"The comparison chain has an odd number of sites, got N={N}")
        prop = build_six_vertex_propagator(SixVertexSpec(p, q, a, b, c, d, (N - 1) // 2))
        # odd layer acts first
        return gap_probability(brute_force_ness(prop.odd, prop.even, exact=True))

    return observable


# ============================================================
# GROWTH LAWS
# ============================================================
def _affine_fit(x: np.ndarray, y: np.ndarray) -> Tuple[List[float], float]:
    a, b = np.polyfit(x, y, 1)
    return [float(a), float(b)], float(np.sum((a * x + b - y) ** 2))


def fit_growth(records: Sequence[DigitComplexityRecord], burn_in: int = BURN_IN) -> GrowthFit:
    """Least squares of each law on the records left after dropping the burn_in smallest sizes."""
    kept = sorted(records, key=lambda r: r.N)[burn_in:]
    if len(kept) < 3:
        raise ValueError(f"Need at least three sizes after burn-in, got {len(kept)}")
    N = np.array([r.N for r in kept], dtype=np.float64)
    d = np.array([r.digits for r in kept], dtype=np.float64)
    params, rss = {}, {}
    params[LINEAR], rss[LINEAR] = _affine_fit(N, d)
    params[QUADRATIC], rss[QUADRATIC] = _affine_fit(N ** 2, d)
    rate, log_a = np.polyfit(N, np.log(d), 1)
    params[EXPONENTIAL] = [float(np.exp(log_a)), float(rate)]
    rss[EXPONENTIAL] = float(np.sum((np.exp(log_a) * np.exp(rate * N) - d) ** 2))
    law = min(rss, key=rss.get)
    logger.info(f"Growth fit over N={[int(v) for v in N]}: {law} (rss {', '.join(f'{k}={v:.3g}' for k, v in rss.items())})")
    return GrowthFit(law, params, rss, [int(v) for v in N])


def digit_complexity_scan(observable: Observable, sizes: Iterable[int], burn_in: int = BURN_IN,
                          fit: bool = True) -> Tuple[List[DigitComplexityRecord], Optional[GrowthFit]]:
    """Exact observable per size (sizes run in parallel) and the best growth law."""
    def one(N: int) -> DigitComplexityRecord:
        start = time.time()
        value = observable(N)
        if not isinstance(value, Fraction):
            raise ValueError(f"Observable at N={N} is not exact: {value!r}")
        rec = DigitComplexityRecord(N, value, digit_complexity(value), time.time() - start)
        logger.info(f"N={N}: {rec.digits} digits in {rec.seconds:.2f}s")
        return rec

    records = parallel_map(one, sorted(set(sizes)))
    return records, (fit_growth(records, burn_in) if fit else None)

import logging
from fractions import Fraction
from typing import Dict, List

import numpy as np
from scipy import stats

from linalg.operator import Operator
from model.schemas import FaceWeights
from sampler.trajectory import flip_table

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
MIN_EXPECTED = 5.0


def exact_distribution(U: Operator, init_bits: str, t: int = 1) -> Dict[str, float]:
    """Column of U^t for a basis initial state, keyed by bit-string (site 1 first)."""
    N = len(init_bits)
    vec: List = [Fraction(0)] * U.dim
    vec[int(init_bits, 2)] = Fraction(1)
    for _ in range(t):
        vec = U.apply(vec)
    return {format(i, f"0{N}b"): float(v) for i, v in enumerate(vec) if v}


def total_variation(empirical: Dict[str, float], exact: Dict[str, float]) -> float:
    keys = set(empirical) | set(exact)
    return 0.5 * sum(abs(empirical.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)


def binomial_deviations(empirical: Dict[str, float], exact: Dict[str, float], samples: int) -> Dict[str, float]:
    """|empirical - exact| in units of the binomial standard deviation of each configuration."""
    out = {}
    for key in set(empirical) | set(exact):
        p = exact.get(key, 0.0)
        sigma = np.sqrt(max(p * (1 - p), 1e-300) / samples)
        out[key] = abs(empirical.get(key, 0.0) - p) / sigma if p > 0 else (np.inf if empirical.get(key) else 0.0)
    return out


def chi_square_against_face_weights(counts: np.ndarray, w: FaceWeights) -> float:
    """
    Smallest chi-square p-value over the (k, l, j) cells of half_step_transition_counts.
    A transition with zero exact probability that was observed yields 0.
    """
    table = flip_table(w)
    p_values = []
    for k in (0, 1):
        for l in (0, 1):
            for j in (0, 1):
                observed = counts[k, l, j]
                n = int(observed.sum())
                if n == 0:
                    continue
                p1 = table[k, l, j]
                expected = np.array([1 - p1, p1]) * n
                impossible = expected == 0
                if np.any(observed[impossible]):
                    logger.warning(f"Observed a forbidden transition at controls ({k},{l}) from {j}")
                    return 0.0
                if np.any(impossible) or np.any(expected < MIN_EXPECTED):
                    continue
                p_values.append(float(stats.chisquare(observed, expected).pvalue))
    return min(p_values) if p_values else 1.0

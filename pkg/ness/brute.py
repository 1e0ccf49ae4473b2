import logging
import time
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from linalg.modular import mod_matmul, reconstruct, solve_mod
from linalg.operator import Operator, site_digits
from linalg.scalars import EXACT
from ness.schemas import NessPair

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
# Largest chain solved by the multi-modular path; denominators grow like N^2 digits.
EXACT_LIMIT = 10
FLOAT_LIMIT = 22
NESS_MAX_PRIMES = 600


def _exact_fixed_point(u_even: Operator, u_odd: Operator) -> np.ndarray:
    """
    Solves (U - I) p = 0 with the last row replaced by sum(p) = 1. The replaced system
    is nonsingular exactly when the fixed point is unique.
    """
    dim = u_even.dim
    rhs = np.zeros(dim, dtype=np.int64)
    rhs[-1] = 1

    def system(p: int):
        U = mod_matmul(u_odd.to_modular(p), u_even.to_modular(p), p)
        A = (U - np.eye(dim, dtype=np.int64)) % p
        A[-1, :] = 1
        return solve_mod(A, rhs, p)

    result = reconstruct(system, f"NESS dim={dim}", max_primes=NESS_MAX_PRIMES)
    if result is None or len(result.pivots) < dim:
        raise ValueError(f"Fixed point of the dim={dim} propagator is not unique")
    logger.info(f"Exact NESS dim={dim} from {len(result.primes)} primes in {result.seconds:.2f}s")
    return np.array(result.values, dtype=object)


def _float_fixed_point(u_even: Operator, u_odd: Operator) -> np.ndarray:
    dim = u_even.dim
    U = sp.csr_matrix(u_odd.to_sparse() @ u_even.to_sparse())
    A = (U - sp.identity(dim, format="csr")).tolil()
    A[dim - 1, :] = np.ones(dim)
    b = np.zeros(dim)
    b[-1] = 1.0
    try:
        p = splu(sp.csc_matrix(A)).solve(b)
    except RuntimeError as e:
        raise ValueError(f"Fixed point of the dim={dim} propagator is not unique: {e}")
    return p


def brute_force_ness(u_even: Operator, u_odd: Operator, exact: Optional[bool] = None) -> NessPair:
    """
    Unique normalized fixed point p of U_odd U_even and its half-step partner
    p' = U_even p. Exact propagators give Fractions up to EXACT_LIMIT sites.
    """
    N = u_even.sites
    if exact is None:
        exact = u_even.domain == EXACT and u_odd.domain == EXACT and N <= EXACT_LIMIT
    start = time.time()
    if exact:
        if u_even.domain != EXACT or u_odd.domain != EXACT:
            raise ValueError("Exact NESS needs exact propagators")
        if N > EXACT_LIMIT:
            raise ValueError(f"Exact NESS is limited to N <= {EXACT_LIMIT}, got N={N}")
        p = _exact_fixed_point(u_even, u_odd)
        p_prime = np.array(u_even.apply(list(p)), dtype=object)
    else:
        if N > FLOAT_LIMIT:
            raise ValueError(f"Float NESS is limited to N <= {FLOAT_LIMIT}, got N={N}")
        p = _float_fixed_point(u_even, u_odd)
        p_prime = u_even.to_sparse() @ p
        p, p_prime = p / p.sum(), p_prime / p_prime.sum()
    logger.info(f"Brute-force NESS N={N} ({'exact' if exact else 'float'}) in {time.time() - start:.2f}s")
    return NessPair(p, p_prime, N)


def gap_probability(pair: NessPair):
    """Probability of the completely empty configuration."""
    total = pair.p.sum()
    if total == 0:
        raise ValueError("Cannot read a probability from a vanishing vector")
    value = pair.p[0] / total
    return Fraction(value) if pair.exact else float(value)


def site_occupations(pair: NessPair, primed: bool = False) -> np.ndarray:
    """<n_j> for j = 1..N."""
    vec = pair.p_prime if primed else pair.p
    digits = site_digits((2,) * pair.N)
    total = vec.sum()
    return np.array([(digits[j] * vec).sum() / total for j in range(pair.N)], dtype=vec.dtype)

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, isqrt
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from sympy import prevprime

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
# Residues stay below 2**24 so that products fit in int64 with room for
# sums of up to 2**14 terms before reduction.
PRIME_CEILING = 2 ** 24
MAX_PRIMES = 80
SAMPLE_PRIMES = 3
SAMPLE_VECTORS = 2
CERTIFY_BLOCK = 512


class ModularFailure(RuntimeError):
    """Raised when residues never stabilise into a rational answer."""


# ============================================================
# RESIDUE ARITHMETIC
# ============================================================
def prime_stream(ceiling: int = PRIME_CEILING, skip: int = 0) -> Iterator[int]:
    p = ceiling
    count = 0
    while True:
        p = prevprime(p)
        if count >= skip:
            yield p
        count += 1


def to_residue(value, p: int) -> int:
    value = Fraction(value)
    den = value.denominator % p
    if den == 0:
        raise ZeroDivisionError(f"Denominator of {value} vanishes mod {p}")
    return (value.numerator % p) * pow(den, -1, p) % p


def residues(values: Sequence, p: int) -> np.ndarray:
    return np.array([to_residue(v, p) for v in values], dtype=np.int64)


def rational_from_residue(a: int, m: int) -> Optional[Fraction]:
    """Wang's rational reconstruction: n/d with |n|, d <= sqrt(m/2) and n = a*d mod m."""
    bound = isqrt(m // 2)
    r0, r1 = m, a % m
    s0, s1 = 0, 1
    while r1 > bound:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        s0, s1 = s1, s0 - q * s1
    if s1 == 0 or abs(s1) > bound or gcd(abs(s1), m) != 1:
        return None
    return Fraction(r1, s1)


def crt_update(acc: List[int], modulus: int, new: np.ndarray, p: int) -> Tuple[List[int], int]:
    inv = pow(modulus % p, -1, p)
    out = []
    for a, r in zip(acc, new.tolist()):
        t = ((r - a) % p) * inv % p
        out.append(a + modulus * t)
    return out, modulus * p


def mod_matmul(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """
    Exact (a @ b) mod p for residue arrays, batched like np.matmul.
    The inner dimension is cut into blocks whose float64 partial sums stay below 2**53.
    """
    inner = a.shape[-1]
    block = max(1, (2 ** 53) // ((p - 1) ** 2))
    af = np.asarray(a, dtype=np.float64)
    bf = np.asarray(b, dtype=np.float64)
    out = None
    for s in range(0, inner, block):
        part = np.fmod(np.matmul(af[..., s:s + block], bf[..., s:s + block, :]), p).astype(np.int64)
        out = part if out is None else (out + part) % p
    if out is None:
        return np.zeros(a.shape[:-1] + b.shape[-1:], dtype=np.int64)
    return out % p


# ============================================================
# ELIMINATION MOD p
# ============================================================
def rref_mod(A: np.ndarray, p: int) -> Tuple[np.ndarray, List[int]]:
    """Reduced row echelon form over GF(p); rows beyond the rank are zero."""
    M = np.array(A, dtype=np.int64) % p
    rows, cols = M.shape
    pivots: List[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.flatnonzero(M[r:, c])
        if nz.size == 0:
            continue
        k = r + int(nz[0])
        if k != r:
            M[[r, k]] = M[[k, r]]
        inv = pow(int(M[r, c]), -1, p)
        M[r] = (M[r] * inv) % p
        col = M[:, c].copy()
        col[r] = 0
        hit = np.flatnonzero(col)
        if hit.size:
            M[hit] = (M[hit] - (col[hit, None] * M[r][None, :]) % p) % p
        pivots.append(c)
        r += 1
    return M, pivots


def solve_mod(A: np.ndarray, b: np.ndarray, p: int) -> Tuple[Optional[np.ndarray], List[int]]:
    """Particular solution with free variables at zero, or None when inconsistent."""
    n = A.shape[1]
    R, pivots = rref_mod(np.hstack([A % p, (b % p)[:, None]]), p)
    if n in pivots:
        return None, pivots
    x = np.zeros(n, dtype=np.int64)
    for i, c in enumerate(pivots):
        x[c] = R[i, n]
    return x, pivots


def nullspace_mod(A: np.ndarray, p: int) -> Tuple[np.ndarray, List[int]]:
    """Canonical kernel basis (one row per free column) over GF(p)."""
    n = A.shape[1]
    R, pivots = rref_mod(A, p)
    free = [c for c in range(n) if c not in set(pivots)]
    K = np.zeros((len(free), n), dtype=np.int64)
    for k, f in enumerate(free):
        K[k, f] = 1
        for i, c in enumerate(pivots):
            K[k, c] = (-R[i, f]) % p
    return K, pivots


# ============================================================
# MULTI-MODULAR DRIVER
# ============================================================
@dataclass
class ModularResult:
    values: List[Fraction]
    pivots: List[int]
    primes: List[int] = field(default_factory=list)
    seconds: float = 0.0


SystemFn = Callable[[int], Tuple[Optional[np.ndarray], List[int]]]


def reconstruct(system_fn: SystemFn, label: str = "system", max_primes: int = MAX_PRIMES,
                ceiling: int = PRIME_CEILING) -> Optional[ModularResult]:
    """
    Runs system_fn(p) -> (residue vector, pivot signature) over a stream of primes,
    lifts the residues by CRT and rational reconstruction, and stops once a fresh
    prime confirms the candidate. Returns None when every prime reports inconsistency.

    Primes whose pivot signature has lower rank (or a later pivot pattern) than the
    best seen are unlucky and get dropped.
    """
    start = time.time()
    acc: List[int] = []
    modulus = 1
    ref_pivots: Optional[List[int]] = None
    used: List[int] = []
    candidate: Optional[List[Fraction]] = None
    inconsistent = 0

    for count, p in enumerate(prime_stream(ceiling)):
        if count >= max_primes:
            break
        vec, pivots = system_fn(p)
        if vec is None:
            inconsistent += 1
            if inconsistent >= 2 and not used:
                logger.info(f"{label}: inconsistent modulo {inconsistent} primes")
                return None
            continue
        if ref_pivots is not None and pivots != ref_pivots:
            if (len(pivots), [-c for c in pivots]) > (len(ref_pivots), [-c for c in ref_pivots]):
                logger.warning(f"{label}: pivot pattern changed at p={p}, restarting lift")
                acc, modulus, used, candidate = [], 1, [], None
            else:
                logger.warning(f"{label}: dropping unlucky prime {p}")
                continue
        ref_pivots = pivots

        if candidate is not None:
            try:
                if np.array_equal(residues(candidate, p), vec % p):
                    logger.info(f"{label}: reconstructed {len(candidate)} values from {len(used)} primes")
                    return ModularResult(values=candidate, pivots=ref_pivots, primes=used + [p],
                                         seconds=time.time() - start)
            except ZeroDivisionError:
                pass

        if not acc:
            acc, modulus = [int(v) for v in vec.tolist()], p
        else:
            acc, modulus = crt_update(acc, modulus, vec, p)
        used.append(p)
        lifted = [rational_from_residue(a, modulus) for a in acc]
        candidate = None if any(v is None for v in lifted) else lifted

    raise ModularFailure(f"{label}: no stable rational lift after {max_primes} primes")


# ============================================================
# RANDOMISED EXACT ZERO TEST
# ============================================================
ApplyFn = Callable[[np.ndarray, int], np.ndarray]


def sampled_zero(apply_fn: ApplyFn, dim: int, seed: int = 0, primes: int = SAMPLE_PRIMES,
                 vectors: int = SAMPLE_VECTORS, ceiling: int = PRIME_CEILING) -> bool:
    """
    Exact-arithmetic zero test of a linear map known only through its action:
    apply_fn(v, p) must return the image of v reduced mod p. A nonzero map passes
    a single random vector with probability at most 1/p.
    """
    rng = np.random.default_rng(seed)
    for p in _take(prime_stream(ceiling, skip=7), primes):
        for _ in range(vectors):
            v = rng.integers(0, p, size=dim, dtype=np.int64)
            out = np.asarray(apply_fn(v, p)) % p
            if np.any(out):
                logger.info(f"Zero test mod {p}: {int(np.count_nonzero(out))} nonzero entries")
                return False
    return True


def certify_zero(apply_fn: ApplyFn, dim: int, bits: float, ceiling: int = PRIME_CEILING,
                 block: int = CERTIFY_BLOCK) -> bool:
    """
    Deterministic zero test of a rational linear map whose entries, once a common
    denominator coprime to the primes is cleared, are integers below 2**bits in size.
    Every unit vector is mapped mod primes until their product exceeds 2**bits.
    """
    covered = 0.0
    used = 0
    for p in prime_stream(ceiling, skip=7):
        if covered > bits:
            break
        for start in range(0, dim, block):
            cols = np.arange(start, min(start + block, dim))
            basis = np.zeros((len(cols), dim), dtype=np.int64)
            basis[np.arange(len(cols)), cols] = 1
            out = np.asarray(apply_fn(basis, p)) % p
            if np.any(out):
                logger.info(f"Nonzero image mod {p} in columns {start}..{cols[-1]}")
                return False
        covered += float(np.log2(p))
        used += 1
    logger.debug(f"Zero map certified with {used} primes for {bits:.1f} bits")
    return True


def _take(stream: Iterator[int], n: int) -> List[int]:
    return [next(stream) for _ in range(n)]

import logging
from fractions import Fraction
from typing import Optional, Union

from sympy.polys.domains import QQ

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
EXACT = "exact"
REAL = "real"
COMPLEX = "complex"

DOMAINS = (EXACT, REAL, COMPLEX)
_DOMAIN_RANK = {EXACT: 0, REAL: 1, COMPLEX: 2}

Scalar = Union[Fraction, float, complex]


# ============================================================
# HELPERS
# ============================================================
def parse_rational(text: Union[str, int, Fraction]) -> Fraction:
    """
    Parses the "num/den" wire form (or a bare integer) into a reduced Fraction.
    Floats are refused: every rational crosses the boundary as a string.
    """
    if isinstance(text, Fraction):
        return text
    if isinstance(text, bool):
        raise ValueError(f"Not a rational: {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if not isinstance(text, str):
        raise ValueError(f"Rationals must be given as 'num/den' strings, got {type(text).__name__}")
    s = text.strip()
    parts = s.split("/")
    if len(parts) > 2 or not all(p.strip().lstrip("+-").isdigit() for p in parts):
        raise ValueError(f"Malformed rational: {text!r}")
    if len(parts) == 2 and int(parts[1]) == 0:
        raise ValueError(f"Zero denominator in {text!r}")
    return Fraction(s)


def format_rational(value: Fraction) -> str:
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


def to_qq(value: Fraction):
    value = Fraction(value)
    return QQ(value.numerator, value.denominator)


def from_qq(value) -> Fraction:
    return Fraction(int(value.numerator), int(value.denominator))


def domain_of(value: Scalar) -> str:
    if isinstance(value, (Fraction, int)) and not isinstance(value, bool):
        return EXACT
    if isinstance(value, complex):
        return COMPLEX
    return REAL


def widest_domain(*domains: str) -> str:
    return max(domains, key=lambda d: _DOMAIN_RANK[d])


def numpy_dtype(domain: str):
    import numpy as np
    if domain == COMPLEX:
        return np.complex128
    if domain == REAL:
        return np.float64
    return object


def rational_reconstruct(x: float, max_den: int = 10**6, tol: float = 1e-9) -> Optional[Fraction]:
    """Closest fraction with denominator <= max_den, or None when it misses x by more than tol."""
    if x != x:
        return None
    guess = Fraction(x).limit_denominator(max_den)
    if abs(float(guess) - x) > tol * max(1.0, abs(x)):
        return None
    return guess

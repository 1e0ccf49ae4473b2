import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np
from sympy import Poly, Rational, Symbol

from linalg.exact import Infeasible, nullspace_rows, solve_rows
from linalg.operator import Operator

logger = logging.getLogger(__name__)

U = Symbol("u")

Coefficient = Union[Fraction, Operator]


# ============================================================
# POWER SERIES
# ============================================================
def _is_op(x) -> bool:
    return isinstance(x, Operator)


def _mul(a: Coefficient, b: Coefficient) -> Coefficient:
    if _is_op(a) and _is_op(b):
        return a @ b
    if _is_op(a):
        return a.scale(b)
    if _is_op(b):
        return b.scale(a)
    return a * b


def _is_zero(x: Coefficient) -> bool:
    return x.is_zero() if _is_op(x) else x == 0


class PowerSeries:
    """
    Truncated series sum_k c_k u^k with c_k either Fractions or Operators.
    len(coefficients) == order + 1 always holds.
    """

    def __init__(self, coefficients: Sequence[Coefficient], order: Optional[int] = None):
        coeffs = list(coefficients)
        if order is None:
            order = len(coeffs) - 1
        if order < 0:
            raise ValueError("Series order must be non-negative")
        if len(coeffs) < order + 1:
            zero = coeffs[0].scale(0) if coeffs and _is_op(coeffs[0]) else Fraction(0)
            coeffs += [zero] * (order + 1 - len(coeffs))
        self.coefficients: List[Coefficient] = [c if _is_op(c) else Fraction(c) for c in coeffs[: order + 1]]
        self.order = order

    def __getitem__(self, k: int) -> Coefficient:
        return self.coefficients[k]

    def __len__(self) -> int:
        return self.order + 1

    def truncate(self, order: int) -> "PowerSeries":
        return PowerSeries(self.coefficients[: order + 1], min(order, self.order))

    def __add__(self, other: "PowerSeries") -> "PowerSeries":
        order = min(self.order, other.order)
        return PowerSeries([self[k] + other[k] for k in range(order + 1)], order)

    def __sub__(self, other: "PowerSeries") -> "PowerSeries":
        order = min(self.order, other.order)
        return PowerSeries([self[k] - other[k] for k in range(order + 1)], order)

    def scale(self, s) -> "PowerSeries":
        return PowerSeries([_mul(c, Fraction(s)) for c in self.coefficients], self.order)

    def __mul__(self, other: "PowerSeries") -> "PowerSeries":
        order = min(self.order, other.order)
        out = []
        for k in range(order + 1):
            acc = None
            for j in range(k + 1):
                term = _mul(self[j], other[k - j])
                acc = term if acc is None else acc + term
            out.append(acc)
        return PowerSeries(out, order)

    def derivative(self) -> "PowerSeries":
        if self.order == 0:
            return PowerSeries([_mul(self[0], Fraction(0))], 0)
        return PowerSeries([_mul(self[k], Fraction(k)) for k in range(1, self.order + 1)], self.order - 1)

    def inverse(self, constant_inverse: Optional[Coefficient] = None) -> "PowerSeries":
        """
        Multiplicative inverse. Operator series need the inverse of their constant
        term; permutation matrices are inverted by transposition automatically.
        """
        c0 = self[0]
        if _is_op(c0):
            if constant_inverse is None:
                constant_inverse = c0.transpose()
                if not (c0 @ constant_inverse - Operator.identity(c0.layout, c0.domain)).is_zero(1e-12):
                    raise ValueError("Constant term is not a permutation; pass its inverse explicitly")
        else:
            if c0 == 0:
                raise ZeroDivisionError("Series with vanishing constant term has no inverse")
            constant_inverse = Fraction(1) / c0
        out = [constant_inverse]
        for k in range(1, self.order + 1):
            acc = None
            for j in range(1, k + 1):
                term = _mul(self[j], out[k - j])
                acc = term if acc is None else acc + term
            out.append(_mul(_mul(constant_inverse, acc), Fraction(-1)))
        return PowerSeries(out, self.order)

    def log_derivative(self, constant_inverse: Optional[Coefficient] = None) -> "PowerSeries":
        """Series of f^{-1} f'."""
        return self.inverse(constant_inverse).truncate(self.order - 1) * self.derivative()

    def evaluate(self, u) -> Coefficient:
        acc = None
        power = Fraction(1) if not isinstance(u, float) else 1.0
        for c in self.coefficients:
            term = _mul(c, power) if _is_op(c) else c * power
            acc = term if acc is None else acc + term
            power = power * u
        return acc

    def is_polynomial(self, degree: int) -> bool:
        return all(_is_zero(c) for c in self.coefficients[degree + 1:])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PowerSeries) or other.order != self.order:
            return False
        return all(_is_zero(a - b) for a, b in zip(self.coefficients, other.coefficients))

    def __repr__(self) -> str:
        return f"PowerSeries(order={self.order})"


def series_from_values(values: Sequence) -> PowerSeries:
    return PowerSeries([Fraction(v) for v in values])


def _poly(coeffs: Sequence[Fraction]) -> Poly:
    """Poly over QQ from ascending coefficients."""
    return Poly([Rational(c.numerator, c.denominator) for c in reversed(list(coeffs))] or [0], U, domain="QQ")


def _ascending(p: Poly, order: int) -> List[Fraction]:
    out = [Fraction(0)] * (order + 1)
    for (k,), c in p.terms():
        if k <= order:
            out[k] = Fraction(int(c.p), int(c.q))
    return out


def poly_series(p: Poly, order: int) -> PowerSeries:
    return PowerSeries(_ascending(p, order), order)


def poly_value(p: Poly, u: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(_ascending(p, p.degree() if not p.is_zero else 0)):
        acc = acc * u + c
    return acc


def poly_to_strings(p: Poly) -> List[str]:
    from linalg.scalars import format_rational
    deg = p.degree() if not p.is_zero else 0
    return [format_rational(c) for c in _ascending(p, deg)]


def poly_from_strings(coeffs: Sequence[str]) -> Poly:
    from linalg.scalars import parse_rational
    return _poly([parse_rational(c) for c in coeffs])


# ============================================================
# RATIONAL FUNCTIONS AND PADE
# ============================================================
@dataclass
class PadeFailure:
    reason: str
    m: int = 0
    n: int = 0


@dataclass
class RationalFunction:
    numerator: Poly
    denominator: Poly

    def __post_init__(self):
        if self.denominator.is_zero:
            raise ZeroDivisionError("Rational function with zero denominator")
        g = self.numerator.gcd(self.denominator)
        if g.degree() > 0:
            self.numerator = self.numerator.quo(g)
            self.denominator = self.denominator.quo(g)
        d0 = _ascending(self.denominator, 0)[0]
        deg = self.denominator.degree()
        lead = d0 if d0 != 0 else _ascending(self.denominator, deg)[deg]
        if lead != 1:
            s = Rational(lead.numerator, lead.denominator)
            self.numerator = self.numerator.quo_ground(s)
            self.denominator = self.denominator.quo_ground(s)

    @property
    def singular_at_origin(self) -> bool:
        return _ascending(self.denominator, 0)[0] == 0

    @property
    def degrees(self):
        return (max(self.numerator.degree(), 0), max(self.denominator.degree(), 0))

    def taylor(self, order: int) -> PowerSeries:
        if self.singular_at_origin:
            raise ZeroDivisionError("Rational function is singular at the origin")
        return poly_series(self.numerator, order) * poly_series(self.denominator, order).inverse()

    def evaluate(self, u):
        if isinstance(u, float):
            return float(self.numerator.eval(u)) / float(self.denominator.eval(u))
        return poly_value(self.numerator, Fraction(u)) / poly_value(self.denominator, Fraction(u))


def pade(series: PowerSeries, m: int, n: int) -> Union[RationalFunction, PadeFailure]:
    """
    P_m/Q_n with Q_n(0) = 1 matching series through order m+n, or a PadeFailure
    when the Hankel system is inconsistent or the result does not re-expand.
    """
    if series.order < m + n:
        return PadeFailure(f"series order {series.order} below m+n={m + n}", m, n)
    c = [Fraction(x) for x in series.coefficients]
    # unknowns q_1..q_n; equation for u^k, k = m+1..m+n: c_k + sum_j q_j c_{k-j} = 0
    rows, rhs = [], []
    for k in range(m + 1, m + n + 1):
        row = {j - 1: c[k - j] for j in range(1, n + 1) if k - j >= 0 and c[k - j]}
        rows.append(row)
        rhs.append(-c[k])
    if n:
        sol = solve_rows(rows, n, rhs)
        if isinstance(sol, Infeasible):
            return PadeFailure("inconsistent Pade system", m, n)
        q = [Fraction(1)] + sol.particular
    else:
        q = [Fraction(1)]
    p = []
    for k in range(m + 1):
        p.append(sum((q[j] * c[k - j] for j in range(min(k, n) + 1)), Fraction(0)))
    try:
        rf = RationalFunction(_poly(p), _poly(q))
    except ZeroDivisionError:
        return PadeFailure("vanishing denominator", m, n)
    if rf.singular_at_origin:
        return PadeFailure("denominator vanishes at the origin", m, n)
    if rf.taylor(m + n) != series.truncate(m + n):
        return PadeFailure("re-expansion does not match the series", m, n)
    return rf


# ============================================================
# ALGEBRAIC (SQUARE-ROOT) ENTRIES
# ============================================================
def sqrt_series(g: PowerSeries, root0: Fraction) -> PowerSeries:
    """Series s with s^2 = g and s(0) = root0 (root0^2 must equal g(0), root0 != 0)."""
    if root0 == 0 or root0 * root0 != g[0]:
        raise ValueError(f"{root0} is not a nonzero square root of {g[0]}")
    s = [Fraction(root0)]
    for k in range(1, g.order + 1):
        acc = g[k] - sum((s[j] * s[k - j] for j in range(1, k)), Fraction(0))
        s.append(acc / (2 * root0))
    return PowerSeries(s, g.order)


@dataclass
class AlgebraicEntry:
    """
    prefactor * (offset + sqrt(radicand)) / denominator, with the square root taken
    on the branch that is positive at u = 0.
    """
    prefactor: Poly
    offset: Poly
    radicand: Poly
    denominator: Poly

    def _root0(self) -> Fraction:
        g0 = _ascending(self.radicand, 0)[0]
        num, den = g0.numerator, g0.denominator
        rn, rd = int(np.round(np.sqrt(num))), int(np.round(np.sqrt(den)))
        for a in (rn - 1, rn, rn + 1):
            for b in (rd - 1, rd, rd + 1):
                if a >= 0 and b > 0 and a * a == num and b * b == den:
                    return Fraction(a, b)
        raise ValueError(f"Radicand constant {g0} is not a rational square")

    def taylor(self, order: int) -> PowerSeries:
        root = sqrt_series(poly_series(self.radicand, order), self._root0())
        top = poly_series(self.prefactor, order) * (poly_series(self.offset, order) + root)
        return top * poly_series(self.denominator, order).inverse()

    def quadratic_parts(self, u: Fraction):
        """(a, b, g) with value a + b*sqrt(g) in the extension field at the rational point u."""
        u = Fraction(u)
        w = poly_value(self.prefactor, u) / poly_value(self.denominator, u)
        return w * poly_value(self.offset, u), w, poly_value(self.radicand, u)

    def evaluate(self, u) -> float:
        a, b, g = self.quadratic_parts(Fraction(u))
        if g < 0:
            raise ValueError(f"Radicand negative at u={u}")
        return float(a) + float(b) * float(np.sqrt(float(g)))


def algebraic_approximant(series: PowerSeries, degree: int) -> Union[AlgebraicEntry, PadeFailure]:
    """
    Quadratic Hermite-Pade fit A f^2 + B f + C = O(u^M) with deg A, B, C <= degree,
    closed as f = (-B + s sqrt(B^2 - 4AC)) / (2A) with the branch matching f(0).
    """
    width = degree + 1
    needed = 3 * width - 1
    if series.order < needed:
        return PadeFailure(f"series order {series.order} below {needed}", degree, degree)
    order = series.order
    f = PowerSeries([Fraction(x) for x in series.coefficients], order)
    f2 = f * f
    rows = []
    for k in range(needed):
        row = {}
        for j in range(width):
            if k - j >= 0:
                if f2[k - j]:
                    row[j] = f2[k - j]
                if f[k - j]:
                    row[width + j] = f[k - j]
            if k == j:
                row[2 * width + j] = Fraction(1)
        rows.append(row)
    kernel = nullspace_rows(rows, 3 * width)
    for vec in kernel:
        a, b, c = _poly(vec[:width]), _poly(vec[width:2 * width]), _poly(vec[2 * width:])
        if a.is_zero:
            continue
        disc = b ** 2 - 4 * a * c
        s0 = 2 * _ascending(a, 0)[0] * f[0] + _ascending(b, 0)[0]
        if s0 == 0:
            continue
        sign = 1 if s0 > 0 else -1
        entry = AlgebraicEntry(prefactor=_poly([Fraction(sign)]), offset=-b * sign, radicand=disc, denominator=2 * a)
        try:
            if _ascending(entry.denominator, 0)[0] == 0:
                continue
            if entry.taylor(order) == f:
                return entry
        except (ValueError, ZeroDivisionError):
            continue
    return PadeFailure("no quadratic relation reproduces the series", degree, degree)

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from linalg.modular import mod_matmul, to_residue
from linalg.operator import Operator, embed_sites
from linalg.scalars import COMPLEX, EXACT, REAL, Scalar

logger = logging.getLogger(__name__)


# ============================================================
# VECTOR-LEVEL APPLICATION
# ============================================================
def chain_length(dim: int, d: int) -> int:
    n = int(round(np.log(dim) / np.log(d)))
    if d ** n != dim:
        raise ValueError(f"Dimension {dim} is not a power of the local dimension {d}")
    return n


def local_view(batch: np.ndarray, sites: Sequence[int], d: int) -> np.ndarray:
    """(batch, dim) -> (batch, d**m, rest) with the given 1-based sites as the middle index."""
    n = chain_length(batch.shape[1], d)
    m = len(sites)
    t = batch.reshape((batch.shape[0],) + (d,) * n)
    t = np.moveaxis(t, list(sites), list(range(1, m + 1)))
    return t.reshape(batch.shape[0], d ** m, -1)


def _restore(view: np.ndarray, sites: Sequence[int], d: int, n: int) -> np.ndarray:
    m = len(sites)
    t = view.reshape((view.shape[0],) + (d,) * n)
    t = np.moveaxis(t, list(range(1, m + 1)), list(sites))
    return t.reshape(view.shape[0], d ** n)


def apply_local(psi: np.ndarray, op: np.ndarray, sites: Sequence[int], d: int, p: Optional[int] = None) -> np.ndarray:
    """
    Applies a dense local operator on the given 1-based sites of a uniform chain.
    psi has shape (dim,) or (batch, dim); with p set, everything is int64 mod p.
    """
    single = psi.ndim == 1
    batch = psi[None, :] if single else psi
    n = chain_length(batch.shape[1], d)
    view = local_view(batch, sites, d)
    out = np.matmul(op, view) if p is None else mod_matmul(op % p, view % p, p)
    out = _restore(out, sites, d, n)
    return out[0] if single else out


@dataclass(frozen=True)
class Placed:
    """A local operator pinned to ordered 1-based chain sites."""
    op: Operator
    sites: Tuple[int, ...]

    @property
    def d(self) -> int:
        return self.op.layout[0]


@dataclass
class LocalSum:
    """
    Sum of products of placed local operators acting on one chain Hilbert space.
    Factors are stored in matrix-product order: the last factor acts first.
    """
    dim: int
    terms: List[Tuple[Scalar, Tuple[Placed, ...]]] = field(default_factory=list)

    @classmethod
    def single(cls, op: Operator, sites: Sequence[int], dim: int, coef: Scalar = Fraction(1)) -> "LocalSum":
        return cls(dim, [(coef, (Placed(op, tuple(sites)),))])

    @classmethod
    def product(cls, placed: Sequence[Placed], dim: int) -> "LocalSum":
        return cls(dim, [(Fraction(1), tuple(placed))])

    @classmethod
    def identity(cls, dim: int) -> "LocalSum":
        return cls(dim, [(Fraction(1), tuple())])

    def __add__(self, other: "LocalSum") -> "LocalSum":
        self._check(other)
        return LocalSum(self.dim, self.terms + other.terms)

    def __sub__(self, other: "LocalSum") -> "LocalSum":
        return self + other.scale(-1)

    def scale(self, s: Scalar) -> "LocalSum":
        return LocalSum(self.dim, [(c * s, f) for c, f in self.terms])

    def __matmul__(self, other: "LocalSum") -> "LocalSum":
        self._check(other)
        return LocalSum(self.dim, [(c1 * c2, f1 + f2) for c1, f1 in self.terms for c2, f2 in other.terms])

    def transpose(self) -> "LocalSum":
        terms = []
        for coef, factors in self.terms:
            terms.append((coef, tuple(Placed(pl.op.transpose(), pl.sites) for pl in reversed(factors))))
        return LocalSum(self.dim, terms)

    def _check(self, other: "LocalSum") -> None:
        if self.dim != other.dim:
            raise ValueError(f"Dimension mismatch: {self.dim} vs {other.dim}")

    @property
    def domain(self) -> str:
        domains = {pl.op.domain for _, f in self.terms for pl in f}
        if COMPLEX in domains or any(isinstance(c, complex) for c, _ in self.terms):
            return COMPLEX
        if REAL in domains or any(isinstance(c, float) for c, _ in self.terms):
            return REAL
        return EXACT

    def apply(self, psi: np.ndarray, p: Optional[int] = None, cache: Optional[Dict] = None) -> np.ndarray:
        cache = {} if cache is None else cache
        out = np.zeros_like(psi)
        for coef, factors in self.terms:
            vec = psi
            for pl in reversed(factors):
                vec = apply_local(vec, _local_array(pl.op, p, cache, psi.dtype), pl.sites, pl.d, p)
            if p is None:
                out = out + coef * vec if not isinstance(coef, Fraction) else out + float(coef) * vec
            else:
                out = (out + to_residue(coef, p) * vec) % p
        return out

    def to_operator(self) -> Operator:
        """Assembles the full operator; only sensible on small chains."""
        total: Optional[Operator] = None
        for coef, factors in self.terms:
            if not factors:
                raise ValueError("Bare identity terms need an explicit layout")
            prod = None
            for pl in factors:
                n = chain_length(self.dim, pl.d)
                emb = embed_sites(pl.op, pl.sites, (pl.d,) * n)
                prod = emb if prod is None else prod @ emb
            prod = prod.scale(coef)
            total = prod if total is None else total + prod
        if total is None:
            raise ValueError("Empty sum has no layout")
        return total


def _local_array(op: Operator, p: Optional[int], cache: Dict, dtype) -> np.ndarray:
    key = (id(op), p)
    if key not in cache:
        if p is not None:
            cache[key] = op.to_modular(p)
        else:
            cache[key] = op.to_float(COMPLEX if np.iscomplexobj(np.zeros(1, dtype=dtype)) else REAL)
        cache[("keep", id(op))] = op
    return cache[key]


def commutator_sum(a: LocalSum, b: LocalSum) -> LocalSum:
    return a @ b - b @ a


def translation_sum(op: Operator, n_sites: int, step: int = 1, coef: Scalar = Fraction(1)) -> LocalSum:
    """Sum of op over starts 1, 1+step, ... of a periodic chain of n_sites uniform sites."""
    d = op.layout[0]
    if n_sites % step:
        raise ValueError(f"Step {step} does not divide {n_sites} sites")
    if op.sites > n_sites:
        raise ValueError(f"Range {op.sites} does not fit {n_sites} sites")
    dim = d ** n_sites
    terms = []
    for start in range(1, n_sites + 1, step):
        sites = tuple(((start - 1 + k) % n_sites) + 1 for k in range(op.sites))
        terms.append((coef, (Placed(op, sites),)))
    return LocalSum(dim, terms)

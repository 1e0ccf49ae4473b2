import logging
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from sympy.polys.domains import QQ
from sympy.polys.matrices.sdm import SDM

from linalg.scalars import COMPLEX, EXACT, REAL, Scalar, from_qq, to_qq, widest_domain

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
# Above this fill ratio an exact operator is handled as a dense flint matrix by the solvers.
DENSE_FILL_THRESHOLD = 0.05


# ============================================================
# HELPERS
# ============================================================
def _sdm_from_dod(dod: Dict[int, Dict[int, object]], dim: int) -> SDM:
    clean = {}
    for r, row in dod.items():
        kept = {c: v for c, v in row.items() if v}
        if kept:
            clean[r] = kept
    return SDM(clean, (dim, dim), QQ)


def _float_dtype(domain: str):
    return np.complex128 if domain == COMPLEX else np.float64


def site_digits(layout: Sequence[int]) -> np.ndarray:
    """Digits of every basis index, shape (sites, dim); site 1 is the most significant."""
    dim = int(np.prod(layout)) if len(layout) else 1
    return np.array(np.unravel_index(np.arange(dim), tuple(layout)), dtype=np.int64).reshape(len(layout), dim)


def _strides(layout: Sequence[int]) -> List[int]:
    strides = [1] * len(layout)
    for k in range(len(layout) - 2, -1, -1):
        strides[k] = strides[k + 1] * layout[k + 1]
    return strides


def _offsets(dims: Sequence[int], strides: Sequence[int]) -> np.ndarray:
    off = np.zeros(1, dtype=np.int64)
    for d, s in zip(dims, strides):
        off = (off[:, None] + np.arange(d, dtype=np.int64)[None, :] * s).ravel()
    return off


class Operator:
    """
    Square operator on a tensor-product space.

    Exact operators keep a sympy SDM over QQ (no stored zeros); Real64/Complex128
    operators keep a scipy CSR matrix. Values are never mutated after construction.
    """

    def __init__(self, data, layout: Sequence[int], domain: str):
        self.layout: Tuple[int, ...] = tuple(int(d) for d in layout)
        self.domain = domain
        dim = int(np.prod(self.layout)) if self.layout else 1
        if data.shape != (dim, dim):
            raise ValueError(f"Storage shape {data.shape} does not match layout {self.layout}")
        if domain == EXACT and not isinstance(data, SDM):
            raise ValueError("Exact operators must be stored as SDM over QQ")
        if domain != EXACT:
            data = sp.csr_matrix(data, dtype=_float_dtype(domain))
            data.eliminate_zeros()
        self.data = data

    # ---------------- construction ----------------
    @classmethod
    def from_entries(cls, entries: Dict[Tuple[int, int], Scalar], layout: Sequence[int], domain: str = EXACT) -> "Operator":
        dim = int(np.prod(layout))
        if domain == EXACT:
            dod: Dict[int, Dict[int, object]] = {}
            for (r, c), v in entries.items():
                if v:
                    dod.setdefault(int(r), {})[int(c)] = to_qq(v)
            return cls(_sdm_from_dod(dod, dim), layout, EXACT)
        if not entries:
            return cls(sp.csr_matrix((dim, dim), dtype=_float_dtype(domain)), layout, domain)
        keys = list(entries.keys())
        rows = [k[0] for k in keys]
        cols = [k[1] for k in keys]
        vals = np.array([complex(entries[k]) if domain == COMPLEX else float(entries[k]) for k in keys])
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)), layout, domain)

    @classmethod
    def from_dense(cls, array, layout: Optional[Sequence[int]] = None, domain: Optional[str] = None) -> "Operator":
        rows = [list(r) for r in array]
        dim = len(rows)
        if layout is None:
            layout = (dim,)
        if domain is None:
            flat = [v for r in rows for v in r]
            if all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in flat):
                domain = EXACT
            elif any(isinstance(v, complex) and v.imag != 0 for v in flat):
                domain = COMPLEX
            else:
                domain = REAL
        if domain == EXACT:
            entries = {(i, j): Fraction(v) for i, r in enumerate(rows) for j, v in enumerate(r) if v != 0}
            return cls.from_entries(entries, layout, EXACT)
        arr = np.array(rows, dtype=_float_dtype(domain))
        return cls(sp.csr_matrix(arr), layout, domain)

    @classmethod
    def identity(cls, layout: Sequence[int], domain: str = EXACT) -> "Operator":
        dim = int(np.prod(layout))
        if domain == EXACT:
            return cls(SDM.eye((dim, dim), QQ), layout, EXACT)
        return cls(sp.identity(dim, dtype=_float_dtype(domain), format="csr"), layout, domain)

    @classmethod
    def zeros(cls, layout: Sequence[int], domain: str = EXACT) -> "Operator":
        return cls.from_entries({}, layout, domain)

    # ---------------- inspection ----------------
    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def sites(self) -> int:
        return len(self.layout)

    @property
    def nnz(self) -> int:
        if self.domain == EXACT:
            return sum(len(row) for row in self.data.values())
        return int(self.data.nnz)

    def entries(self) -> Iterator[Tuple[int, int, Scalar]]:
        if self.domain == EXACT:
            for r, row in self.data.items():
                for c, v in row.items():
                    yield r, c, from_qq(v)
        else:
            coo = self.data.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                yield int(r), int(c), v

    def get(self, r: int, c: int) -> Scalar:
        if self.domain == EXACT:
            v = self.data.get(r, {}).get(c)
            return from_qq(v) if v is not None else Fraction(0)
        return self.data[r, c]

    def is_zero(self, tol: float = 0.0) -> bool:
        if self.domain == EXACT:
            return self.nnz == 0
        return self.max_abs() <= tol

    def max_abs(self) -> float:
        if self.domain == EXACT:
            return max((abs(float(v)) for _, _, v in self.entries()), default=0.0)
        return float(abs(self.data).max()) if self.data.nnz else 0.0

    def is_diagonal(self) -> bool:
        return all(r == c for r, c, _ in self.entries())

    def trace(self) -> Scalar:
        if self.domain == EXACT:
            return sum((v for r, c, v in self.entries() if r == c), Fraction(0))
        return self.data.diagonal().sum()

    def pattern(self) -> frozenset:
        return frozenset((r, c) for r, c, _ in self.entries())

    # ---------------- conversion ----------------
    def astype(self, domain: str) -> "Operator":
        if domain == self.domain:
            return self
        if domain == EXACT:
            raise ValueError("Floating operators cannot be promoted to the exact domain")
        if self.domain == EXACT:
            ents = list(self.entries())
            dim = self.dim
            if not ents:
                return Operator(sp.csr_matrix((dim, dim), dtype=_float_dtype(domain)), self.layout, domain)
            rows, cols, vals = zip(*ents)
            arr = np.array([float(v) for v in vals], dtype=_float_dtype(domain))
            return Operator(sp.coo_matrix((arr, (rows, cols)), shape=(dim, dim)), self.layout, domain)
        return Operator(self.data.astype(_float_dtype(domain)), self.layout, domain)

    def to_dense(self) -> np.ndarray:
        if self.domain == EXACT:
            out = np.full((self.dim, self.dim), Fraction(0), dtype=object)
            for r, c, v in self.entries():
                out[r, c] = v
            return out
        return self.data.toarray()

    def to_float(self, domain: str = REAL) -> np.ndarray:
        return self.astype(domain if self.domain == EXACT else self.domain).data.toarray()

    def to_sparse(self, domain: str = REAL) -> sp.csr_matrix:
        return self.astype(domain if self.domain == EXACT else self.domain).data

    def to_modular(self, p: int) -> np.ndarray:
        """Dense int64 residues mod p; only meant for local operators."""
        if self.domain != EXACT:
            raise ValueError("Only exact operators have modular images")
        out = np.zeros((self.dim, self.dim), dtype=np.int64)
        for r, row in self.data.items():
            for c, v in row.items():
                out[r, c] = (int(v.numerator) * pow(int(v.denominator), -1, p)) % p
        return out

    # ---------------- arithmetic ----------------
    def _aligned(self, other: "Operator") -> Tuple["Operator", "Operator"]:
        if self.dim != other.dim:
            raise ValueError(f"Dimension mismatch: {self.dim} vs {other.dim}")
        domain = widest_domain(self.domain, other.domain)
        return self.astype(domain), other.astype(domain)

    def __matmul__(self, other: "Operator") -> "Operator":
        a, b = self._aligned(other)
        if a.domain == EXACT:
            return Operator(a.data.matmul(b.data), self.layout, EXACT)
        return Operator(a.data @ b.data, self.layout, a.domain)

    def __add__(self, other: "Operator") -> "Operator":
        a, b = self._aligned(other)
        if a.domain == EXACT:
            return Operator(a.data.add(b.data), self.layout, EXACT)
        return Operator(a.data + b.data, self.layout, a.domain)

    def __sub__(self, other: "Operator") -> "Operator":
        a, b = self._aligned(other)
        if a.domain == EXACT:
            return Operator(a.data.sub(b.data), self.layout, EXACT)
        return Operator(a.data - b.data, self.layout, a.domain)

    def __neg__(self) -> "Operator":
        return self.scale(-1)

    def scale(self, s: Scalar) -> "Operator":
        if self.domain == EXACT and isinstance(s, (int, Fraction)):
            if s == 0:
                return Operator.zeros(self.layout, EXACT)
            return Operator(self.data.mul(to_qq(s)), self.layout, EXACT)
        domain = COMPLEX if (isinstance(s, complex) or self.domain == COMPLEX) else REAL
        base = self.astype(domain)
        return Operator(base.data * s, self.layout, domain)

    def __mul__(self, s: Scalar) -> "Operator":
        return self.scale(s)

    __rmul__ = __mul__

    def transpose(self) -> "Operator":
        if self.domain == EXACT:
            return Operator(self.data.transpose(), self.layout, EXACT)
        return Operator(self.data.T, self.layout, self.domain)

    def dagger(self) -> "Operator":
        if self.domain == COMPLEX:
            return Operator(self.data.conj().T, self.layout, COMPLEX)
        return self.transpose()

    def apply(self, vector):
        """Matrix-vector product; exact operators take and return lists of Fractions."""
        if self.domain == EXACT:
            out = [Fraction(0)] * self.dim
            vec = [Fraction(v) for v in vector]
            for r, row in self.data.items():
                acc = Fraction(0)
                for c, v in row.items():
                    if vec[c]:
                        acc += from_qq(v) * vec[c]
                out[r] = acc
            return out
        return self.data @ np.asarray(vector)

    def allclose(self, other: "Operator", tol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= tol

    def __repr__(self) -> str:
        return f"Operator(dim={self.dim}, layout={self.layout}, domain={self.domain}, nnz={self.nnz})"


# ============================================================
# TENSOR-PRODUCT OPERATIONS
# ============================================================
def kron(a: Operator, b: Operator) -> Operator:
    domain = widest_domain(a.domain, b.domain)
    layout = a.layout + b.layout
    if domain == EXACT:
        nb = b.dim
        dod: Dict[int, Dict[int, object]] = {}
        for r1, row1 in a.data.items():
            for c1, v1 in row1.items():
                for r2, row2 in b.data.items():
                    target = dod.setdefault(r1 * nb + r2, {})
                    for c2, v2 in row2.items():
                        target[c1 * nb + c2] = v1 * v2
        return Operator(_sdm_from_dod(dod, a.dim * nb), layout, EXACT)
    return Operator(sp.kron(a.astype(domain).data, b.astype(domain).data, format="csr"), layout, domain)


def embed_sites(op: Operator, sites: Sequence[int], layout: Sequence[int]) -> Operator:
    """
    Embeds op on the given ordered chain sites (1-based, not necessarily consecutive)
    and acts as the identity everywhere else.
    """
    layout = tuple(layout)
    zero_based = [s - 1 for s in sites]
    if len(set(zero_based)) != len(zero_based):
        raise ValueError(f"Repeated sites in {list(sites)}")
    if any(s < 0 or s >= len(layout) for s in zero_based):
        raise ValueError(f"Sites {list(sites)} outside a chain of {len(layout)} sites")
    if len(zero_based) != op.sites or any(layout[s] != d for s, d in zip(zero_based, op.layout)):
        raise ValueError(f"Operator layout {op.layout} does not match chain sites {list(sites)}")

    strides = _strides(layout)
    rest = [s for s in range(len(layout)) if s not in zero_based]
    base = _offsets([layout[s] for s in rest], [strides[s] for s in rest])
    off = _offsets(op.layout, [strides[s] for s in zero_based])
    dim = int(np.prod(layout))

    if op.domain == EXACT:
        dod: Dict[int, Dict[int, object]] = {}
        base_list = base.tolist()
        for r, row in op.data.items():
            ro = int(off[r])
            for c, v in row.items():
                co = int(off[c])
                for b in base_list:
                    dod.setdefault(b + ro, {})[b + co] = v
        return Operator(_sdm_from_dod(dod, dim), layout, EXACT)

    coo = op.data.tocoo()
    rows = (base[:, None] + off[coo.row][None, :]).ravel()
    cols = (base[:, None] + off[coo.col][None, :]).ravel()
    vals = np.tile(coo.data, len(base))
    return Operator(sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)), layout, op.domain)


def embed(op: Operator, start_site: int, N: int) -> Operator:
    """Embeds op on sites start_site, start_site+1, ... of a periodic chain of N uniform sites."""
    d = op.layout[0]
    if any(x != d for x in op.layout):
        raise ValueError("embed needs a uniform local dimension")
    r = op.sites
    if r > N:
        raise ValueError(f"Operator of range {r} does not fit a chain of {N} sites")
    sites = [((start_site - 1 + k) % N) + 1 for k in range(r)]
    return embed_sites(op, sites, (d,) * N)


def commutator(a: Operator, b: Operator) -> Operator:
    if a.dim != b.dim:
        raise ValueError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    return a @ b - b @ a


def permute_sites(op: Operator, order: Sequence[int]) -> Operator:
    """
    Reorders tensor factors: site k of the result is site order[k] of op (1-based).
    """
    perm = [o - 1 for o in order]
    if sorted(perm) != list(range(op.sites)):
        raise ValueError(f"{list(order)} is not a permutation of the sites")
    digits = site_digits(op.layout)
    new_layout = tuple(op.layout[p] for p in perm)
    new_index = np.ravel_multi_index(tuple(digits[p] for p in perm), new_layout)
    if op.domain == EXACT:
        dod: Dict[int, Dict[int, object]] = {}
        for r, row in op.data.items():
            target = dod.setdefault(int(new_index[r]), {})
            for c, v in row.items():
                target[int(new_index[c])] = v
        return Operator(_sdm_from_dod(dod, op.dim), new_layout, EXACT)
    coo = op.data.tocoo()
    return Operator(sp.coo_matrix((coo.data, (new_index[coo.row], new_index[coo.col])), shape=coo.shape), new_layout, op.domain)


def partial_trace(op: Operator, traced_sites: Iterable[int]) -> Operator:
    """Traces out the given 1-based sites; the remaining sites keep their order."""
    traced = sorted({s - 1 for s in traced_sites})
    if any(s < 0 or s >= op.sites for s in traced):
        raise ValueError(f"Sites {[s + 1 for s in traced]} outside layout {op.layout}")
    keep = [s for s in range(op.sites) if s not in traced]
    keep_layout = tuple(op.layout[s] for s in keep)
    digits = site_digits(op.layout)
    keep_idx = np.ravel_multi_index(tuple(digits[s] for s in keep), keep_layout) if keep else np.zeros(op.dim, dtype=np.int64)
    if traced:
        traced_key = np.ravel_multi_index(tuple(digits[s] for s in traced), tuple(op.layout[s] for s in traced))
    else:
        traced_key = np.zeros(op.dim, dtype=np.int64)
    out_layout = keep_layout if keep else (1,)
    out_dim = int(np.prod(out_layout))

    if op.domain == EXACT:
        dod: Dict[int, Dict[int, object]] = {}
        for r, row in op.data.items():
            for c, v in row.items():
                if traced_key[r] != traced_key[c]:
                    continue
                target = dod.setdefault(int(keep_idx[r]), {})
                key = int(keep_idx[c])
                target[key] = target.get(key, QQ(0)) + v
        return Operator(_sdm_from_dod(dod, out_dim), out_layout, EXACT)

    coo = op.data.tocoo()
    mask = traced_key[coo.row] == traced_key[coo.col]
    m = sp.coo_matrix((coo.data[mask], (keep_idx[coo.row[mask]], keep_idx[coo.col[mask]])), shape=(out_dim, out_dim))
    return Operator(m.tocsr(), out_layout, op.domain)


def is_face_diagonal(op: Operator) -> bool:
    """True when op is diagonal in the first and last qubit of its support."""
    qubits = int(round(np.log2(op.dim)))
    if 2 ** qubits != op.dim:
        raise ValueError("Face structure needs a qubit support")
    first = 1 << (qubits - 1)
    for r, c, _ in op.entries():
        if (r ^ c) & first or (r ^ c) & 1:
            return False
    return True


def face_mask(dim: int) -> np.ndarray:
    """Boolean dim x dim mask of entries allowed by face-diagonality."""
    qubits = int(round(np.log2(dim)))
    idx = np.arange(dim)
    first = (idx >> (qubits - 1)) & 1
    last = idx & 1
    return (first[:, None] == first[None, :]) & (last[:, None] == last[None, :])

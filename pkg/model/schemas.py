import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Set, Union

from linalg.scalars import Scalar, format_rational, parse_rational

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
PERIODIC = "periodic"
OPEN = "open"
BOUNDARIES = (PERIODIC, OPEN)

DETERMINISTIC_RCA54 = "deterministic-rca54"
TRIVIAL = "trivial"
STOCHASTIC = "stochastic"
UNITARY = "unitary"
GENERIC = "generic"

# Non-stochastic, non-unitary quadruple used for the bulk integrability pipelines.
DEFAULT_DEFORMATION = ("1/7", "1/2", "1/8", "3/11")
# (a, b, c, d, beta, gamma) for the boundary-driven chain.
DEFAULT_NESS_PARAMETERS = ("11/23", "19/32", "23/53", "31/71", "30/101", "40/49")


def _scalar(value) -> Scalar:
    if isinstance(value, (complex, float)):
        return value
    return parse_rational(value)


def _wire(value: Scalar) -> Union[str, list]:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, float):
        return repr(value)
    return format_rational(value)


@dataclass(frozen=True)
class FaceWeights:
    """Entries of f00; the three other face matrices are the Pauli X."""
    alpha: Scalar
    beta: Scalar
    gamma: Scalar
    delta: Scalar

    @classmethod
    def parse(cls, alpha, beta, gamma, delta) -> "FaceWeights":
        return cls(_scalar(alpha), _scalar(beta), _scalar(gamma), _scalar(delta))

    @classmethod
    def rca54(cls) -> "FaceWeights":
        return cls(Fraction(1), Fraction(0), Fraction(0), Fraction(1))

    @classmethod
    def default(cls) -> "FaceWeights":
        return cls.parse(*DEFAULT_DEFORMATION)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.as_tuple())

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma, self.delta)

    def f00(self):
        return [[self.alpha, self.beta], [self.gamma, self.delta]]

    def face_matrix(self, k: int, l: int):
        if k == 0 and l == 0:
            return self.f00()
        one, zero = (Fraction(1), Fraction(0)) if self.is_exact else (1.0, 0.0)
        return [[zero, one], [one, zero]]

    def is_stochastic(self) -> bool:
        if not self.is_exact:
            return False
        a, b, g, d = self.as_tuple()
        return a == 1 - g and d == 1 - b and 0 <= b <= 1 and 0 <= g <= 1

    def is_unitary(self, tol: float = 1e-12) -> bool:
        a, b, g, d = (complex(v) for v in self.as_tuple())
        # columns of f00 orthonormal
        c0 = abs(a) ** 2 + abs(g) ** 2
        c1 = abs(b) ** 2 + abs(d) ** 2
        cross = a.conjugate() * b + g.conjugate() * d
        return abs(c0 - 1) <= tol and abs(c1 - 1) <= tol and abs(cross) <= tol

    def classify(self) -> Set[str]:
        classes: Set[str] = set()
        a, b, g, d = self.as_tuple()
        if (a, d, b, g) == (1, 1, 0, 0):
            classes.add(DETERMINISTIC_RCA54)
        if (b, g, a, d) == (1, 1, 0, 0):
            classes.add(TRIVIAL)
        if self.is_stochastic():
            classes.add(STOCHASTIC)
        if self.is_unitary():
            classes.add(UNITARY)
        if not classes:
            classes.add(GENERIC)
        return classes

    def to_json(self) -> Dict:
        return {k: _wire(v) for k, v in zip(("alpha", "beta", "gamma", "delta"), self.as_tuple())}


def stochastic_face_weights(beta, gamma) -> FaceWeights:
    beta, gamma = parse_rational(beta), parse_rational(gamma)
    return FaceWeights(1 - gamma, beta, gamma, 1 - beta)


@dataclass(frozen=True)
class BoundaryDriving:
    a: Fraction
    b: Fraction
    c: Fraction
    d: Fraction

    @classmethod
    def parse(cls, a, b, c, d) -> "BoundaryDriving":
        drv = cls(parse_rational(a), parse_rational(b), parse_rational(c), parse_rational(d))
        drv.validate()
        return drv

    def validate(self) -> None:
        for name, v in zip("abcd", (self.a, self.b, self.c, self.d)):
            if not 0 < v < 1:
                raise ValueError(f"Driving parameter {name}={v} outside (0,1)")

    def to_json(self) -> Dict:
        return {k: format_rational(v) for k, v in zip("abcd", (self.a, self.b, self.c, self.d))}


@dataclass(frozen=True)
class ChainGeometry:
    N: int
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"Unknown boundary {self.boundary!r}")
        if self.N <= 0 or self.N % 2:
            raise ValueError(f"Chain length must be even and positive, got N={self.N}")


@dataclass(frozen=True)
class SixVertexSpec:
    p: Fraction
    q: Fraction
    a: Fraction
    b: Fraction
    c: Fraction
    d: Fraction
    N_half: int

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError(f"Hopping parameters must be non-negative, got p={self.p}, q={self.q}")
        for name, v in zip("abcd", (self.a, self.b, self.c, self.d)):
            if not 0 < v < 1:
                raise ValueError(f"Boundary parameter {name}={v} outside (0,1)")
        if self.N_half < 1:
            raise ValueError("N_half must be positive")

    @property
    def sites(self) -> int:
        return 2 * self.N_half + 1


@dataclass
class ModelSpec:
    """Model file contents: deformation, geometry and optional driving."""
    weights: FaceWeights
    geometry: ChainGeometry
    driving: Optional[BoundaryDriving] = None
    extra: Dict = field(default_factory=dict)

    def to_json(self) -> Dict:
        out = dict(self.weights.to_json())
        out["N"] = self.geometry.N
        out["boundary"] = self.geometry.boundary
        if self.driving is not None:
            out.update(self.driving.to_json())
        out.update(self.extra)
        return out


def model_spec_from_json(data: Dict) -> ModelSpec:
    if "beta" in data and "gamma" in data and "alpha" not in data:
        weights = stochastic_face_weights(data["beta"], data["gamma"])
    else:
        weights = FaceWeights.parse(data["alpha"], data["beta"], data["gamma"], data["delta"])
    geometry = ChainGeometry(int(data.get("N", 8)), data.get("boundary", PERIODIC))
    driving = None
    if all(k in data for k in "abcd"):
        driving = BoundaryDriving.parse(data["a"], data["b"], data["c"], data["d"])
    known = {"alpha", "beta", "gamma", "delta", "N", "boundary", "a", "b", "c", "d"}
    return ModelSpec(weights, geometry, driving, {k: v for k, v in data.items() if k not in known})


def load_model_spec(path: Union[str, Path]) -> ModelSpec:
    with open(path, "r") as f:
        data = json.load(f)
    spec = model_spec_from_json(data)
    logger.info(f"Loaded model {spec.weights.to_json()} N={spec.geometry.N} boundary={spec.geometry.boundary}")
    return spec


def dump_model_spec(spec: ModelSpec, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_json(), f, indent=2)


def default_ness_model(N: int = 6) -> ModelSpec:
    a, b, c, d, beta, gamma = DEFAULT_NESS_PARAMETERS
    return ModelSpec(stochastic_face_weights(beta, gamma), ChainGeometry(N, OPEN), BoundaryDriving.parse(a, b, c, d))

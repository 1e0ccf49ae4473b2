import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from linalg.parallel import parallel_map
from model.schemas import OPEN, BoundaryDriving, ChainGeometry, FaceWeights

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
ALL_ZERO = "all-zero"
BERNOULLI = "bernoulli"
LIGHT_CONE = "light-cone"
LIGHT_CONE_DENSITY = 0.5


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Philox counter stream keyed by (seed, trajectory index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class Trajectory:
    """Frames are time-ordered configurations, two half-steps per full step; site 1 is column 0."""
    frames: np.ndarray
    seed: int
    weights: FaceWeights
    geometry: ChainGeometry
    driving: Optional[BoundaryDriving] = None
    index: int = 0
    layers: List[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return (len(self.frames) - 1) // 2

    def bits(self, frame: int) -> str:
        return "".join(str(int(b)) for b in self.frames[frame])


# ============================================================
# INITIAL CONFIGURATIONS
# ============================================================
def initial_configuration(kind: str, N: int, rng: np.random.Generator) -> np.ndarray:
    """
    all-zero | bernoulli:<rho> | light-cone:<W> | an explicit bit-string.
    light-cone:W keeps zeros outside a centred window of W sites and fills the window with Bernoulli(1/2).
    """
    if kind == ALL_ZERO:
        return np.zeros(N, dtype=np.uint8)
    if kind.startswith(BERNOULLI):
        rho = float(kind.split(":", 1)[1]) if ":" in kind else 0.5
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"Bernoulli density {rho} outside [0,1]")
        return (rng.random(N) < rho).astype(np.uint8)
    if kind.startswith(LIGHT_CONE):
        width = int(kind.split(":", 1)[1]) if ":" in kind else max(2, N // 4)
        if not 0 < width <= N:
            raise ValueError(f"Light-cone window {width} does not fit N={N}")
        state = np.zeros(N, dtype=np.uint8)
        start = (N - width) // 2
        state[start:start + width] = (rng.random(width) < LIGHT_CONE_DENSITY).astype(np.uint8)
        return state
    if set(kind) <= {"0", "1"} and len(kind) == N:
        return np.array([int(c) for c in kind], dtype=np.uint8)
    raise ValueError(f"Unknown initial configuration {kind!r} for N={N}")


# ============================================================
# HALF-STEP UPDATES
# ============================================================
def flip_table(w: FaceWeights) -> np.ndarray:
    """P(active site becomes 1 | left control k, right control l, current value j), indexed [k, l, j]."""
    table = np.zeros((2, 2, 2))
    for k in (0, 1):
        for l in (0, 1):
            f = w.face_matrix(k, l)
            for j in (0, 1):
                table[k, l, j] = float(f[1][j])
    return table


def _bulk_update(state: np.ndarray, active: np.ndarray, table: np.ndarray, rng: np.random.Generator) -> None:
    """active holds 0-based sites; neighbours wrap periodically."""
    if active.size == 0:
        return
    N = len(state)
    k = state[(active - 1) % N]
    l = state[(active + 1) % N]
    j = state[active]
    draws = rng.random(active.size)
    state[active] = (draws < table[k, l, j]).astype(np.uint8)


def _boundary_update(state: np.ndarray, site: int, control: int, p_zero: Sequence[float],
                     rng: np.random.Generator) -> None:
    # reservoir draw ignores the current edge value
    state[site] = np.uint8(rng.random() >= p_zero[state[control]])


def _periodic_half_steps(N: int):
    odd = np.arange(0, N, 2)
    even = np.arange(1, N, 2)
    # U = U_even U_odd: the odd layer acts first
    return [("odd", odd), ("even", even)]


def sample_trajectory(w: FaceWeights, geometry: ChainGeometry, init: str, T: int, seed: int,
                      drv: Optional[BoundaryDriving] = None, index: int = 0) -> Trajectory:
    if not w.is_stochastic():
        raise ValueError(f"Sampling needs stochastic weights, got {w.to_json()}")
    if T < 0:
        raise ValueError("Number of steps must be non-negative")
    N = geometry.N
    rng = make_rng(seed, index)
    state = initial_configuration(init, N, rng)
    table = flip_table(w)
    frames = [state.copy()]
    layers: List[str] = []

    if geometry.boundary == OPEN:
        if drv is None:
            raise ValueError("Open chains need boundary driving")
        drv.validate()
        even_bulk = np.arange(1, N - 2, 2)
        odd_bulk = np.arange(2, N - 1, 2)
        left_zero = (float(drv.a), float(drv.b))
        right_zero = (float(drv.c), float(drv.d))
        for _ in range(T):
            # U = U_odd U_even: the even layer (with the right reservoir) acts first
            _bulk_update(state, even_bulk, table, rng)
            _boundary_update(state, N - 1, N - 2, right_zero, rng)
            frames.append(state.copy())
            _boundary_update(state, 0, 1, left_zero, rng)
            _bulk_update(state, odd_bulk, table, rng)
            frames.append(state.copy())
            layers += ["even", "odd"]
    else:
        for _ in range(T):
            for name, active in _periodic_half_steps(N):
                _bulk_update(state, active, table, rng)
                frames.append(state.copy())
                layers.append(name)

    return Trajectory(np.array(frames, dtype=np.uint8), seed, w, geometry, drv, index, layers)


def sample_ensemble(w: FaceWeights, geometry: ChainGeometry, init: str, T: int, seed: int, count: int,
                    drv: Optional[BoundaryDriving] = None, workers: int = 0) -> List[Trajectory]:
    """Trajectory i uses the stream (seed, i), so serial and threaded runs agree."""
    logger.info(f"Sampling {count} trajectories of {T} steps, N={geometry.N}, seed={seed}")
    return parallel_map(lambda i: sample_trajectory(w, geometry, init, T, seed, drv, i), range(count), workers)


# ============================================================
# EMPIRICAL STATISTICS
# ============================================================
def empirical_distribution(trajectories: Sequence[Trajectory], t: int) -> Dict[str, float]:
    """Normalized frequencies of configurations after t full steps."""
    if not trajectories:
        raise ValueError("Empty ensemble")
    first = trajectories[0]
    for tr in trajectories:
        if tr.weights != first.weights or tr.geometry != first.geometry or tr.driving != first.driving:
            raise ValueError("Trajectories come from different models")
        if tr.steps < t:
            raise ValueError(f"Trajectory {tr.index} has only {tr.steps} steps, asked for t={t}")
    counts: Dict[str, int] = {}
    for tr in trajectories:
        key = tr.bits(2 * t)
        counts[key] = counts.get(key, 0) + 1
    total = len(trajectories)
    return {k: v / total for k, v in sorted(counts.items())}


def half_step_transition_counts(trajectories: Sequence[Trajectory]) -> np.ndarray:
    """
    counts[k, l, j, i]: bulk active sites with controls (k, l) that went from j to i.
    Periodic chains only; every site of the active sublattice is counted.
    """
    counts = np.zeros((2, 2, 2, 2), dtype=np.int64)
    for tr in trajectories:
        if tr.geometry.boundary == OPEN:
            raise ValueError("Transition counts are collected on periodic chains")
        N = tr.geometry.N
        for step, name in enumerate(tr.layers):
            before, after = tr.frames[step], tr.frames[step + 1]
            active = np.arange(0, N, 2) if name == "odd" else np.arange(1, N, 2)
            k = before[(active - 1) % N]
            l = before[(active + 1) % N]
            np.add.at(counts, (k, l, before[active], after[active]), 1)
    return counts

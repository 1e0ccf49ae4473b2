import logging
import time
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import least_squares

from linalg.parallel import parallel_map
from model.propagators import build_open_propagator
from model.schemas import BoundaryDriving, FaceWeights
from ness.brute import brute_force_ness
from ness.mpa import (LEFT, RIGHT, boundary_gates, face_tensor, level_residuals, linear_keys, mpa_contract,
                      residual_norms, residuals)
from ness.schemas import (BANDS, BLOCK, L, L_PRIME, LEAST_SQUARES, MINUS, NULLSPACE, R, R_PRIME, RATIONAL_LIFT,
                          TENSORS, ZERO, ExactLiftError, LevelSolution, PatchMPA, SingularParametersError,
                          band_position)

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
STARTS = 8
ACCEPT_TOL = 1e-10
NULL_RCOND = 1e-9
NONZERO_TOL = 1e-9
LSQ_MAX_NFEV = 300
MAX_BACKTRACKS = 4
MAX_RESTARTS = 3
# level -> chain length checked against the float brute force
VERIFY_AT = {2: 4, 3: 6, 4: 8}
VERIFY_TOL = 1e-8
PIN_TRIES = 6
PIN_ZERO = 1e-6
REFINE_STEPS = 4
LIFT_DENOMINATOR = 10 ** 15
LIFT_TOL = Fraction(1, 10 ** 24)

BOUNDARY_SIZE = 2 * 2 * BLOCK
BLOCK_SIZE = 2 * 2 * BLOCK * BLOCK


# ============================================================
# TRIAL LEVEL
# ============================================================
class _TrialLevel:
    """Levels below n from a solved ansatz, level n from a batch of unknown vectors (B, K)."""

    def __init__(self, base: Optional[PatchMPA], n: int, X: np.ndarray):
        self.base = base
        self.max_level = n
        self.n = n
        B = X.shape[0]
        self.blocks: Dict[Tuple[str, int, int], np.ndarray] = {}
        self.vectors: Dict[str, np.ndarray] = {}
        off = 0
        if n == 1:
            for name in (L, L_PRIME, R, R_PRIME):
                self.vectors[name] = X[:, off:off + BOUNDARY_SIZE].reshape(B, 2, 2, BLOCK)
                off += BOUNDARY_SIZE
            bands = (ZERO,)
        else:
            bands = BANDS
        for name in TENSORS:
            for band in bands:
                i, j = band_position(n, band)
                self.blocks[(name, i, j)] = X[:, off:off + BLOCK_SIZE].reshape(B, 2, 2, BLOCK, BLOCK)
                off += BLOCK_SIZE

    def block(self, name: str, i: int, j: int) -> Optional[np.ndarray]:
        if abs(i - j) > 1 or min(i, j) < 1 or max(i, j) > self.n:
            return None
        if (name, i, j) in self.blocks:
            return self.blocks[(name, i, j)]
        return self.base.block(name, i, j)

    def boundary(self, name: str) -> np.ndarray:
        if self.n > 1:
            return self.base.boundary(name)
        v = self.vectors[name]
        return v[..., None, :] if name in (L, L_PRIME) else v[..., :, None]


def level_unknowns(n: int) -> int:
    return 4 * BOUNDARY_SIZE + 2 * BLOCK_SIZE if n == 1 else 2 * len(BANDS) * BLOCK_SIZE


def write_level(base: Optional[PatchMPA], n: int, x: np.ndarray) -> PatchMPA:
    """Copy of base extended to level n with the entries of x filled in."""
    mpa = PatchMPA.zeros(1, exact=x.dtype == object) if base is None else base.extended(n)
    trial = _TrialLevel(base, n, x[None, :])
    if n == 1:
        for name in (L, L_PRIME, R, R_PRIME):
            mpa.set_boundary(name, trial.vectors[name][0])
    for (name, i, j), value in trial.blocks.items():
        mpa.tensors[name][:, :, BLOCK * (i - 1):BLOCK * i, BLOCK * (j - 1):BLOCK * j] = value[0]
    return mpa


# ============================================================
# LEVEL PROBLEM
# ============================================================
class _LevelProblem:
    """
    Level-n entries as x = K y: K spans the kernel of the equations linear in the
    new entries, y is fixed by least squares on the rest plus a scale condition.
    """

    def __init__(self, base: Optional[PatchMPA], n: int, w: FaceWeights, drv: BoundaryDriving):
        self.base = base
        self.n = n
        self.F = face_tensor(w, exact=False)
        self.gates = boundary_gates(drv, exact=False)
        self.size = level_unknowns(n)
        self.linear = linear_keys(n)
        self.kernel = self._kernel()

    def _residuals(self, X: np.ndarray) -> Dict[str, np.ndarray]:
        return level_residuals(_TrialLevel(self.base, self.n, X), self.F, self.gates, self.n)

    def _kernel(self) -> np.ndarray:
        res = self._residuals(np.eye(self.size))
        J = np.concatenate([res[k].reshape(self.size, -1) for k in self.linear], axis=1).T
        return null_space(J, rcond=NULL_RCOND)

    def _norms(self, X: np.ndarray) -> np.ndarray:
        B = X.shape[0]
        if self.n == 1:
            parts = [X[:, :2 * BOUNDARY_SIZE], X[:, 2 * BOUNDARY_SIZE:4 * BOUNDARY_SIZE], X[:, 4 * BOUNDARY_SIZE:]]
        else:
            trial = _TrialLevel(self.base, self.n, X)
            i, j = band_position(self.n, MINUS)
            parts = [np.concatenate([trial.blocks[(name, i, j)].reshape(B, -1) for name in TENSORS], axis=1)]
        return np.stack([np.sum(p * p, axis=1) - 1.0 for p in parts], axis=1)

    def evaluate(self, Y: np.ndarray) -> np.ndarray:
        X = Y @ self.kernel.T
        res = self._residuals(X)
        B = X.shape[0]
        parts = [np.broadcast_to(v, (B,) + v.shape[-5:]).reshape(B, -1)
                 for k, v in res.items() if k not in self.linear]
        parts.append(self._norms(X))
        return np.concatenate(parts, axis=1)

    def fun(self, y: np.ndarray) -> np.ndarray:
        return self.evaluate(y[None, :])[0]

    def jac(self, y: np.ndarray) -> np.ndarray:
        # residuals are quadratic, so unit central differences are exact
        E = np.eye(y.size)
        out = self.evaluate(np.vstack([y + E, y - E]))
        return ((out[:y.size] - out[y.size:]) / 2.0).T

    def solve(self, seed: int) -> Optional[Tuple[float, np.ndarray]]:
        rng = np.random.default_rng(seed)
        y0 = rng.standard_normal(self.kernel.shape[1])
        try:
            sol = least_squares(self.fun, y0, jac=self.jac, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                max_nfev=LSQ_MAX_NFEV)
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.debug(f"Level {self.n} start {seed} failed: {e}")
            return None
        worst = float(np.max(np.abs(sol.fun)))
        if worst > ACCEPT_TOL:
            logger.debug(f"Level {self.n} start {seed}: residual {worst:.2e}")
            return None
        return worst, self.kernel @ sol.x


# ============================================================
# RECURSION
# ============================================================
def _min_abs(mpa: PatchMPA, n: int) -> float:
    entries = np.asarray(mpa.level_entries(n), dtype=np.float64)
    return float(np.min(np.abs(entries)))


def solve_level(base: Optional[PatchMPA], n: int, w: FaceWeights, drv: BoundaryDriving, seed: int = 0,
                starts: int = STARTS) -> Tuple[PatchMPA, LevelSolution]:
    """Entries of level n given the solved levels below; picks the start whose smallest entry is largest."""
    start = time.time()
    problem = _LevelProblem(base, n, w, drv)
    free = problem.kernel.shape[1]
    report = LevelSolution(level=n, path=NULLSPACE, unknowns=problem.size)
    current = PatchMPA.zeros(1) if base is None else base.extended(n)
    if free == 0:
        report.message = "linear equations leave no free entries"
        report.seconds = time.time() - start
        return current, report

    report.path = LEAST_SQUARES
    seeds = [seed * 1000 + k for k in range(starts)]
    found = [r for r in parallel_map(problem.solve, seeds) if r is not None]
    report.accepted_starts = len(found)
    if not found:
        report.message = f"no start out of {starts} reached residual {ACCEPT_TOL:g}"
        report.seconds = time.time() - start
        logger.warning(f"Level {n}: {report.message}")
        return current, report

    candidates = [write_level(base, n, x) for _, x in found]
    best = max(candidates, key=lambda m: _min_abs(m, n))
    report.min_abs_entry = _min_abs(best, n)
    report.residuals = residual_norms(residuals(best, w, drv, level=n))[n]
    report.ok = True
    if not report.min_abs_entry > NONZERO_TOL:
        report.message = "best solution has vanishing entries"
    report.seconds = time.time() - start
    logger.info(f"Level {n}: {free} free of {problem.size} unknowns, {len(found)}/{starts} starts accepted, "
                f"min |entry| {report.min_abs_entry:.3e} in {report.seconds:.2f}s")
    return best, report


def _matches_brute_force(mpa: PatchMPA, w: FaceWeights, drv: BoundaryDriving, N: int) -> bool:
    prop = build_open_propagator(w, drv, N)
    brute = brute_force_ness(prop.even, prop.odd, exact=False)
    try:
        pair = mpa_contract(mpa, N).normalized()
    except ValueError as e:
        logger.warning(f"Contraction at N={N} failed: {e}")
        return False
    gap = max(float(np.max(np.abs(pair.p - brute.p))), float(np.max(np.abs(pair.p_prime - brute.p_prime))))
    logger.info(f"Ansatz vs brute force at N={N}: max deviation {gap:.2e}")
    return gap <= VERIFY_TOL


def solve_levels(w: FaceWeights, drv: BoundaryDriving, max_level: int, seed: int = 0,
                 starts: int = STARTS, verify: bool = True) -> Tuple[PatchMPA, List[LevelSolution]]:
    """
    Level-by-level solution of the boundary and bulk relations. A level without an
    accepted start sends the recursion one level back with a fresh seed; a mismatch
    with the brute-force steady state restarts from level 1. The partial ansatz is
    returned with a failing LevelSolution when the retries run out.
    """
    if not w.is_stochastic():
        raise ValueError(f"The steady-state ansatz needs stochastic bulk weights, got {w}")
    if w.beta == 0 and w.gamma == 0:
        raise SingularParametersError("The patch ansatz is singular at beta = gamma = 0")
    drv.validate()
    if max_level < 1:
        raise ValueError(f"max_level must be positive, got {max_level}")

    for restart in range(MAX_RESTARTS):
        solved: List[PatchMPA] = []
        reports: List[LevelSolution] = []
        backtracks = 0
        attempt = seed + 7919 * restart
        n = 1
        mismatch = False
        while n <= max_level:
            base = solved[-1] if solved else None
            mpa, report = solve_level(base, n, w, drv, seed=attempt, starts=starts)
            attempt += 1
            if not report.ok:
                if backtracks < MAX_BACKTRACKS and n > 1:
                    backtracks += 1
                    logger.warning(f"Level {n} failed, re-solving level {n - 1} ({backtracks}/{MAX_BACKTRACKS})")
                    solved.pop()
                    reports.pop()
                    n -= 1
                    continue
                reports.append(report)
                return mpa, reports
            solved.append(mpa)
            reports.append(report)
            if verify and n in VERIFY_AT and not _matches_brute_force(mpa, w, drv, VERIFY_AT[n]):
                mismatch = True
                break
            n += 1
        if not mismatch:
            return solved[-1], reports
        logger.warning(f"Restarting the recursion ({restart + 1}/{MAX_RESTARTS}) after a brute-force mismatch")

    reports[-1].ok = False
    reports[-1].message = "contraction disagrees with the brute-force steady state"
    return solved[-1], reports


def fit_wall_time_exponent(timings: Sequence[Tuple[int, float]], burn_in: int = 3) -> float:
    """Exponent k of t(n) ~ n^k from (level, seconds) pairs, skipping the first burn_in levels."""
    pts = [(n, t) for n, t in timings if n > burn_in and t > 0]
    if len(pts) < 2:
        raise ValueError(f"Need at least two timed levels beyond {burn_in}, got {len(pts)}")
    n, t = np.array(pts, dtype=np.float64).T
    slope, _ = np.polyfit(np.log(n), np.log(t), 1)
    return float(slope)


# ============================================================
# EXACT LIFT
# ============================================================
class _ExactLevel:
    """
    All level-n equations in the raw entries x. Float evaluation drives the pinning,
    Fraction evaluation (object arrays on an exact base) drives the refinement.
    """

    def __init__(self, base: Optional[PatchMPA], n: int, w: FaceWeights, drv: BoundaryDriving):
        self.bases = {True: base, False: None if base is None else base.to_float()}
        self.n = n
        self.size = level_unknowns(n)
        self.F = {exact: face_tensor(w, exact=exact) for exact in (True, False)}
        self.gates = {exact: boundary_gates(drv, exact=exact) for exact in (True, False)}

    def equations(self, X: np.ndarray) -> np.ndarray:
        exact = X.dtype == object
        res = level_residuals(_TrialLevel(self.bases[exact], self.n, X), self.F[exact], self.gates[exact], self.n)
        B = X.shape[0]
        parts = []
        for key, v in res.items():
            tail = v.shape[-4:] if key in (LEFT, RIGHT) else v.shape[-5:]
            parts.append(np.broadcast_to(v, (B,) + tail).reshape(B, -1))
        return np.concatenate(parts, axis=1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        E = np.eye(self.size)
        out = self.equations(np.vstack([x + E, x - E]))
        return ((out[:self.size] - out[self.size:]) / 2.0).T

    def polish(self, x: np.ndarray, pins: Dict[int, float]) -> Optional[np.ndarray]:
        free = np.array([i for i in range(self.size) if i not in pins], dtype=np.int64)
        start = x.copy()
        for i, v in pins.items():
            start[i] = v

        def full(z):
            y = start.copy()
            y[free] = z
            return y

        try:
            sol = least_squares(lambda z: self.equations(full(z)[None, :])[0], start[free],
                                jac=lambda z: self.jacobian(full(z))[:, free], method="trf",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=LSQ_MAX_NFEV)
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.debug(f"Level {self.n}: polish with {len(pins)} pins failed: {e}")
            return None
        if float(np.max(np.abs(sol.fun), initial=0.0)) > ACCEPT_TOL:
            return None
        return full(sol.x)

    def pin(self, x: np.ndarray) -> Optional[Tuple[np.ndarray, Dict[int, float]]]:
        """Greedily holds free entries at 0 or +-1 until the solution is locally isolated."""
        pins: Dict[int, float] = {}
        while True:
            free = [i for i in range(self.size) if i not in pins]
            kernel = null_space(self.jacobian(x)[:, free], rcond=NULL_RCOND)
            if kernel.shape[1] == 0:
                return x, pins
            weight = np.linalg.norm(kernel, axis=1)
            for idx in np.argsort(-weight)[:PIN_TRIES]:
                if weight[idx] < NULL_RCOND:
                    break
                i = free[idx]
                target = 0.0 if abs(x[i]) < PIN_ZERO else float(np.sign(x[i]))
                moved = self.polish(x, {**pins, i: target})
                if moved is not None:
                    x, pins[i] = moved, target
                    break
            else:
                logger.debug(f"Level {self.n}: {kernel.shape[1]} free directions left unpinned")
                return None

    def refine(self, x: np.ndarray, pins: Dict[int, float]) -> np.ndarray:
        """Newton steps on Fraction entries with float corrections; pinned entries stay put."""
        free = np.array([i for i in range(self.size) if i not in pins], dtype=np.int64)
        J = self.jacobian(x)[:, free]
        xq = np.array([Fraction(v) for v in x], dtype=object)
        for _ in range(REFINE_STEPS):
            f = self.equations(xq[None, :])[0]
            if not any(f):
                break
            step = np.linalg.lstsq(J, -f.astype(np.float64), rcond=None)[0]
            xq[free] += np.array([Fraction(v) for v in step], dtype=object)
        return xq


def _rationalize(xq: np.ndarray) -> Optional[np.ndarray]:
    out = np.empty(xq.size, dtype=object)
    for i, v in enumerate(xq):
        q = v.limit_denominator(LIFT_DENOMINATOR)
        if abs(q - v) > LIFT_TOL * max(1, abs(v)):
            return None
        out[i] = q
    return out


def _solves_exactly(mpa: PatchMPA, w: FaceWeights, drv: BoundaryDriving, n: int) -> bool:
    return all(not np.any(v != 0) for v in residuals(mpa, w, drv, level=n)[n].values())


def lift_level(base: Optional[PatchMPA], n: int, w: FaceWeights, drv: BoundaryDriving, seed: int = 0,
               starts: int = STARTS) -> Tuple[PatchMPA, LevelSolution]:
    """
    Exact level n over an exact base: float starts, greedy 0/+-1 pinning of the
    remaining freedom, Newton refinement in rationals, rational reconstruction and
    an exact check of every level-n equation.
    """
    start = time.time()
    float_base = None if base is None else base.to_float()
    problem = _LevelProblem(float_base, n, w, drv)
    exact = _ExactLevel(base, n, w, drv)
    report = LevelSolution(level=n, path=RATIONAL_LIFT, unknowns=problem.size)
    seeds = [seed * 1000 + k for k in range(starts)]
    if problem.kernel.shape[1]:
        found = [r for r in parallel_map(problem.solve, seeds) if r is not None]
    else:
        found = [(0.0, np.zeros(problem.size))]
    report.accepted_starts = len(found)
    for k, (_, x) in enumerate(found):
        pinned = exact.pin(x)
        if pinned is None:
            continue
        q = _rationalize(exact.refine(*pinned))
        if q is None:
            logger.debug(f"Level {n} start {k}: entries have no small rational form")
            continue
        mpa = write_level(base, n, q)
        if not _solves_exactly(mpa, w, drv, n):
            logger.debug(f"Level {n} start {k}: rational entries miss the equations")
            continue
        report.ok = True
        report.residuals = residual_norms(residuals(mpa, w, drv, level=n))[n]
        nonzero = [abs(v) for v in mpa.level_entries(n) if v != 0]
        report.min_abs_entry = float(min(nonzero)) if nonzero else 0.0
        report.seconds = time.time() - start
        logger.info(f"Level {n}: exact with {len(pinned[1])} pinned entries from start {k} in {report.seconds:.2f}s")
        return mpa, report
    report.seconds = time.time() - start
    report.message = f"none of {len(found)} accepted starts lifts to rational entries"
    raise ExactLiftError(f"Level {n}: {report.message}")


def solve_levels_exact(w: FaceWeights, drv: BoundaryDriving, max_level: int, seed: int = 0,
                       starts: int = STARTS) -> Tuple[PatchMPA, List[LevelSolution]]:
    """Level recursion with every level lifted to Fractions; raises ExactLiftError when a level resists."""
    if not w.is_stochastic():
        raise ValueError(f"The steady-state ansatz needs stochastic bulk weights, got {w}")
    if w.beta == 0 and w.gamma == 0:
        raise SingularParametersError("The patch ansatz is singular at beta = gamma = 0")
    drv.validate()
    if max_level < 1:
        raise ValueError(f"max_level must be positive, got {max_level}")
    mpa: Optional[PatchMPA] = None
    reports: List[LevelSolution] = []
    for n in range(1, max_level + 1):
        mpa, report = lift_level(mpa, n, w, drv, seed=seed + n, starts=starts)
        reports.append(report)
    return mpa, reports

"""Registration drivers: Adam on se(3), weighted-SVD surrogate iterations, and ICP."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    DegenerateRotationError,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    bounding_sphere,
    compose,
    exp_se3,
    log_se3,
)
from .intersection import IntersectionMode, Weighting, default_params
from .lines import SamplerKind, make_rng, sample_chords
from .loss import ChamferLoss, ChamferMetric, LineLoss, LossReport, NoIntersectionsError, WelschParams, welsch

log = logging.getLogger(__name__)

MAX_RESAMPLE_FAILURES = 5


class Objective(str, enum.Enum):
    LINE_LOSS = "line-loss"
    CHAMFER = "cd"
    CHAMFER_WELSCH = "cd-w"


class SurrogateWeight(str, enum.Enum):
    IRLS = "irls"
    PRINTED = "welsch-value"


class IterateSelection(str, enum.Enum):
    AUTO = "auto"
    BEST = "best"
    LAST = "last"


class RotationCenter(str, enum.Enum):
    ORIGIN = "origin"
    CENTROID = "centroid"


class RankDeficiencyError(ValueError):
    """Too few weighted correspondences to determine a rigid transform."""


@dataclass
class SolverConfig:
    max_iterations: int = 300
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lines_per_iteration: int = 15000
    convergence_tol: float = 1e-6
    resample_lines: bool = True
    recompute_sphere: bool = True
    seed: int = 0
    nu0: float = 0.5
    sampler: SamplerKind = SamplerKind.SPHERE_CHORD
    perturbation: float = 0.05
    k: int = 2
    intersection_mode: IntersectionMode = IntersectionMode.CONVEX_COMBINATION
    weighting: Weighting = Weighting.DISTANCE
    surrogate_weight: SurrogateWeight = SurrogateWeight.IRLS
    # AUTO returns the lowest-loss iterate only when the loss scale is fixed
    # across iterations; adaptive Welsch scales make recorded losses incomparable
    iterate_selection: IterateSelection = IterateSelection.AUTO
    # Adam steps rotate about this point; the moved source centroid decouples
    # rotation from translation, which keeps per-coordinate step scaling sane
    rotation_center: RotationCenter = RotationCenter.CENTROID

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lines_per_iteration < 1:
            raise ValueError("lines_per_iteration must be >= 1")
        self.sampler = SamplerKind(self.sampler)
        self.intersection_mode = IntersectionMode(self.intersection_mode)
        self.weighting = Weighting(self.weighting)
        self.surrogate_weight = SurrogateWeight(self.surrogate_weight)
        self.iterate_selection = IterateSelection(self.iterate_selection)
        self.rotation_center = RotationCenter(self.rotation_center)

    def returns_best(self, fixed_scale: bool) -> bool:
        if self.iterate_selection is IterateSelection.AUTO:
            return fixed_scale
        return self.iterate_selection is IterateSelection.BEST

    def to_dict(self) -> dict:
        return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    loss: float
    d_med: float
    params: np.ndarray
    seconds: float


@dataclass
class SolveTrace:
    records: list[TraceRecord] = field(default_factory=list)
    best_iteration: int = -1

    def __len__(self) -> int:
        return len(self.records)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def append(self, iteration: int, loss: float, d_med: float, T: RigidTransform, started: float) -> None:
        try:
            xi = log_se3(T).vector()
        except DegenerateRotationError:
            xi = np.full(6, np.nan)
        self.records.append(TraceRecord(iteration, float(loss), float(d_med), xi, time.perf_counter() - started))


class Adam:
    """Adam on a 6-vector; :meth:`step` returns the update to apply, not the new parameters."""

    def __init__(self, learning_rate=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8, dim=6):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, grad) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def weighted_procrustes(src, dst, weights=None) -> RigidTransform:
    """Closed-form ``argmin sum w ||R src + t - dst||^2`` with a reflection-safe SVD."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    w = np.ones(src.shape[0]) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if src.shape != dst.shape or w.shape[0] != src.shape[0]:
        raise ValueError("src, dst and weights must have matching lengths")
    if np.count_nonzero(w > 0) < 3:
        raise RankDeficiencyError(f"need at least 3 positively weighted pairs, got {np.count_nonzero(w > 0)}")
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    H = (src - mu_s).T @ ((dst - mu_d) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return RigidTransform(R, mu_d - R @ mu_s)


class _LineObjective:
    """Chord sampling plus line-loss evaluation shared by the line-based solvers."""

    def __init__(self, source: PointCloud, target: PointCloud, config: SolverConfig):
        self.source = source
        self.target = target
        self.config = config
        self.rng = make_rng(config.seed)
        self.loss = LineLoss(
            source,
            target,
            WelschParams(config.nu0),
            default_params(source, config.k, mode=config.intersection_mode, weighting=config.weighting),
            default_params(target, config.k, mode=config.intersection_mode, weighting=config.weighting),
        )
        self.sphere = None
        self.chords = None

    def _resample(self, T: RigidTransform) -> None:
        cfg = self.config
        moved = T.apply_cloud(self.source)
        if self.sphere is None or cfg.recompute_sphere:
            self.sphere = bounding_sphere(moved, self.target)
        self.chords = sample_chords(
            self.sphere, cfg.lines_per_iteration, cfg.sampler, (moved, self.target), self.rng, cfg.perturbation
        )

    def __call__(self, T: RigidTransform) -> LossReport:
        if self.chords is None or self.config.resample_lines:
            self._resample(T)
        failures = 0
        while True:
            try:
                return self.loss(T, self.chords)
            except NoIntersectionsError:
                failures += 1
                if failures >= MAX_RESAMPLE_FAILURES:
                    raise
                log.debug("no chord hit both clouds; resampling (%d)", failures)
                self._resample(T)


def _make_objective(source, target, objective: Objective, config: SolverConfig):
    objective = Objective(objective)
    if objective is Objective.LINE_LOSS:
        return _LineObjective(source, target, config)
    metric = ChamferMetric.SQUARED_L2 if objective is Objective.CHAMFER else ChamferMetric.WELSCH
    return ChamferLoss(source, target, metric, WelschParams(config.nu0))


def solve_first_order(
    source: PointCloud,
    target: PointCloud,
    initial: RigidTransform | None = None,
    objective: Objective | str = Objective.LINE_LOSS,
    config: SolverConfig | None = None,
) -> tuple[RigidTransform, SolveTrace]:
    """Adam descent with left-multiplicative steps ``T <- exp(step) T``.

    Returns the lowest-loss recorded iterate or the final one, per ``config.iterate_selection``.
    """
    config = config or SolverConfig()
    objective = Objective(objective)
    evaluate = _make_objective(source, target, objective, config)
    keep_best = config.returns_best(fixed_scale=objective is Objective.CHAMFER)
    adam = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    T = initial or RigidTransform.identity()
    trace = SolveTrace()
    best_T, best_loss = T, math.inf
    started = time.perf_counter()
    for it in range(config.max_iterations):
        report = evaluate(T)
        trace.append(it, report.value, report.d_med, T, started)
        if report.value < best_loss:
            best_T, best_loss, trace.best_iteration = T, report.value, it
        center = np.zeros(3)
        if config.rotation_center is RotationCenter.CENTROID:
            center = T.apply(source.points).mean(axis=0)
        step = adam.step(_recenter_gradient(report.gradient, center))
        T = compose(_centered_exp(step, center), T)
        if np.linalg.norm(step) < config.convergence_tol:
            break
    if keep_best:
        return best_T, trace
    return T, trace


def _recenter_gradient(grad: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Gradient for a perturbation that rotates about ``center`` instead of the origin."""
    out = np.array(grad, dtype=float)
    out[:3] -= np.cross(center, out[3:])
    return out


def _centered_exp(xi: np.ndarray, center: np.ndarray) -> RigidTransform:
    """``translate(center) * exp(xi) * translate(-center)``."""
    D = exp_se3(xi)
    return RigidTransform(D.rotation, D.translation + center - D.rotation @ center)


def _surrogate_weights(report: LossReport, T: RigidTransform, mode: SurrogateWeight) -> np.ndarray:
    obj = report.objective
    r = np.linalg.norm(obj.residuals(T), axis=1)
    if mode is SurrogateWeight.IRLS:
        kernel = np.exp(-(r * r) / (2.0 * obj.nu * obj.nu))
    else:
        kernel = welsch(r, obj.nu)
    return kernel * obj.coef


def solve_svd_surrogate(
    source: PointCloud,
    target: PointCloud,
    initial: RigidTransform | None = None,
    config: SolverConfig | None = None,
) -> tuple[RigidTransform, SolveTrace]:
    """Alternate line-matched correspondences with closed-form weighted Procrustes updates."""
    config = config or SolverConfig()
    evaluate = _LineObjective(source, target, config)
    T = initial or RigidTransform.identity()
    trace = SolveTrace()
    best_T, best_loss = T, math.inf
    started = time.perf_counter()
    for it in range(config.max_iterations):
        report = evaluate(T)
        trace.append(it, report.value, report.d_med, T, started)
        if report.value < best_loss:
            best_T, best_loss, trace.best_iteration = T, report.value, it
        weights = _surrogate_weights(report, T, config.surrogate_weight)
        obj = report.objective
        delta = weighted_procrustes(T.apply(obj.src), obj.dst, weights)
        T = compose(delta, T)
        if _step_norm(delta) < config.convergence_tol:
            break
    if config.returns_best(fixed_scale=False):
        return best_T, trace
    return T, trace


def _step_norm(delta: RigidTransform) -> float:
    try:
        return float(np.linalg.norm(log_se3(delta).vector()))
    except DegenerateRotationError:
        return math.inf


def solve_icp(
    source: PointCloud,
    target: PointCloud,
    initial: RigidTransform | None = None,
    config: SolverConfig | None = None,
) -> tuple[RigidTransform, SolveTrace]:
    """Point-to-point ICP.  The objective never increases, so the last iterate is returned."""
    config = config or SolverConfig()
    index = SpatialIndex(target)
    T = initial or RigidTransform.identity()
    trace = SolveTrace()
    started = time.perf_counter()
    for it in range(config.max_iterations):
        moved = T.apply(source.points)
        d, j = index.nearest(moved)
        trace.append(it, float(np.mean(d * d)), float(np.median(d)), T, started)
        delta = weighted_procrustes(moved, target.points[j])
        T = compose(delta, T)
        if _step_norm(delta) < config.convergence_tol:
            break
    trace.best_iteration = len(trace) - 1
    return T, trace


METHODS = ("line-loss", "cd", "cd-w", "icp", "svd-surrogate")


def solve(method: str, source, target, initial=None, config: SolverConfig | None = None):
    """Dispatch by method name (one of :data:`METHODS`)."""
    if method in ("line-loss", "cd", "cd-w"):
        return solve_first_order(source, target, initial, Objective(method), config)
    if method == "icp":
        return solve_icp(source, target, initial, config)
    if method == "svd-surrogate":
        return solve_svd_surrogate(source, target, initial, config)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

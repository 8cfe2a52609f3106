"""Alignment objectives: the random-line intersection loss and Chamfer baselines.

Every objective is evaluated in two stages.  The combinatorial stage (chord
intersections, nearest matches, per-chord weights, Welsch scale) runs at the
current transform and yields a :class:`PairObjective`: a frozen list of
``(source point, target point, coefficient)`` triples.  Value and gradient are
then smooth functions of the transform, with gradients taken with respect to a
left perturbation ``exp(xi) * T`` ordered ``(omega, v)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import PointCloud, RigidTransform, SpatialIndex, compose, exp_se3, neighbor_table
from .intersection import BatchIntersections, IntersectionParams, build_blocks, default_params, intersect_batch
from .lines import Chord, ChordSet

NU_FLOOR = 1e-12
DEFAULT_NU0 = 0.5


class NoIntersectionsError(RuntimeError):
    """No chord intersected both clouds."""


class ChamferMetric(str, enum.Enum):
    SQUARED_L2 = "squared-l2"
    WELSCH = "welsch"


def welsch(x, nu):
    """Bounded robust penalty ``1 - exp(-x^2 / 2 nu^2)``."""
    x = np.asarray(x, dtype=float)
    return -np.expm1(-(x * x) / (2.0 * nu * nu))


def welsch_derivative(x, nu):
    x = np.asarray(x, dtype=float)
    return x / (nu * nu) * np.exp(-(x * x) / (2.0 * nu * nu))


@dataclass(frozen=True)
class WelschParams:
    nu0: float = DEFAULT_NU0

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ValueError("nu0 must be positive")

    def scale(self, d_med: float) -> float:
        return max(self.nu0 * d_med, NU_FLOOR)


@dataclass(frozen=True)
class PairObjective:
    """``sum_k coef_k * rho(|T(src_k) - dst_k|)`` with frozen pairs.

    ``nu=None`` selects the squared distance, otherwise Welsch with scale ``nu``.
    """

    src: np.ndarray
    dst: np.ndarray
    coef: np.ndarray
    nu: float | None = None

    def __len__(self) -> int:
        return self.src.shape[0]

    def residuals(self, T: RigidTransform) -> np.ndarray:
        return T.apply(self.src) - self.dst

    def value(self, T: RigidTransform) -> float:
        r = np.linalg.norm(self.residuals(T), axis=1)
        rho = r * r if self.nu is None else welsch(r, self.nu)
        return float(np.dot(self.coef, rho))

    def gradient(self, T: RigidTransform) -> np.ndarray:
        q = T.apply(self.src)
        e = q - self.dst
        if self.nu is None:
            scale = 2.0 * self.coef
        else:
            r2 = np.einsum("ij,ij->i", e, e)
            scale = self.coef / (self.nu * self.nu) * np.exp(-r2 / (2.0 * self.nu * self.nu))
        g = e * scale[:, None]
        return np.concatenate([np.cross(q, g).sum(axis=0), g.sum(axis=0)])

    def value_at_step(self, T: RigidTransform, xi) -> float:
        return self.value(compose(exp_se3(xi), T))


@dataclass(frozen=True)
class LossReport:
    value: float
    gradient: np.ndarray
    lines_used: int
    lines_skipped: int
    d_med: float
    nu: float | None
    objective: PairObjective
    line_weights: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LineTerm:
    """One surviving chord: its weight and matched pairs (direction 0 = source->target)."""

    chord: Chord
    weight: float
    source_points: np.ndarray
    target_points: np.ndarray
    pairs: list[tuple[int, int, int]]


@numba.njit(cache=True)
def _match_along_chords(s_start, s_pts, t_start, t_pts):
    """Nearest target for each source intersection and vice versa, per chord."""
    sigma = np.full(s_pts.shape[0], -1, np.int64)
    rho = np.full(t_pts.shape[0], -1, np.int64)
    for c in range(s_start.shape[0] - 1):
        s0, s1 = s_start[c], s_start[c + 1]
        t0, t1 = t_start[c], t_start[c + 1]
        if s1 == s0 or t1 == t0:
            continue
        for i in range(s0, s1):
            best = np.inf
            for j in range(t0, t1):
                e = 0.0
                for q in range(3):
                    e += (s_pts[i, q] - t_pts[j, q]) ** 2
                if e < best:
                    best = e
                    sigma[i] = j
        for j in range(t0, t1):
            best = np.inf
            for i in range(s0, s1):
                e = 0.0
                for q in range(3):
                    e += (s_pts[i, q] - t_pts[j, q]) ** 2
                if e < best:
                    best = e
                    rho[j] = i
    return sigma, rho


class LineLoss:
    """Line-intersection loss between a moving source and a fixed target.

    Neighbour tables, spatial blocks and cylinder radii depend only on each
    cloud's intrinsic geometry, so they are computed once here and reused at
    every transform.
    """

    def __init__(
        self,
        source: PointCloud,
        target: PointCloud,
        welsch_params: WelschParams | None = None,
        source_params: IntersectionParams | None = None,
        target_params: IntersectionParams | None = None,
    ):
        self.source = source
        self.target = target
        self.welsch_params = welsch_params or WelschParams()
        self.source_params = source_params or default_params(source)
        self.target_params = target_params or default_params(target)
        _, self._src_nbr = neighbor_table(source, self.source_params.k)
        _, self._tgt_nbr = neighbor_table(target, self.target_params.k)
        self._src_blocks = build_blocks(source.points, 16)
        self._tgt_blocks = build_blocks(target.points, 16)

    def intersections(self, transform: RigidTransform, chords: ChordSet) -> tuple[BatchIntersections, BatchIntersections]:
        moved = transform.apply(self.source.points)
        s = intersect_batch(chords, moved, self._src_nbr, self.source_params, self._src_blocks)
        t = intersect_batch(chords, self.target.points, self._tgt_nbr, self.target_params, self._tgt_blocks)
        return s, t

    def __call__(self, transform: RigidTransform, chords) -> LossReport:
        chords = ChordSet.from_chords(chords)
        n_chords = len(chords)
        if n_chords == 0:
            raise ValueError("at least one chord is required")
        s, t = self.intersections(transform, chords)
        used = (s.counts > 0) & (t.counts > 0)
        n_used = int(used.sum())
        if n_used == 0:
            raise NoIntersectionsError(f"none of {n_chords} chords intersected both clouds")

        s_start = np.concatenate([[0], np.cumsum(s.counts)])
        t_start = np.concatenate([[0], np.cumsum(t.counts)])
        sigma, rho = _match_along_chords(s_start, s.points, t_start, t.points)
        w_line = np.exp(-np.abs((s.counts - t.counts) / 2.0))

        src_combo = np.einsum("ik,ikj->ij", s.weights, self.source.points[s.source_indices])
        fwd = np.nonzero(sigma >= 0)[0]
        bwd = np.nonzero(rho >= 0)[0]
        src = np.vstack([src_combo[fwd], src_combo[rho[bwd]]])
        dst = np.vstack([t.points[sigma[fwd]], t.points[bwd]])
        coef = np.concatenate([w_line[s.chord_ids[fwd]], w_line[t.chord_ids[bwd]]]) / n_used

        dist = np.linalg.norm(np.vstack([s.points[fwd] - t.points[sigma[fwd]], s.points[rho[bwd]] - t.points[bwd]]), axis=1)
        d_med = float(np.median(dist))
        nu = self.welsch_params.scale(d_med)
        objective = PairObjective(src, dst, coef, nu)
        value = float(np.dot(coef, welsch(dist, nu)))
        return LossReport(
            value=value,
            gradient=objective.gradient(transform),
            lines_used=n_used,
            lines_skipped=n_chords - n_used,
            d_med=d_med,
            nu=nu,
            objective=objective,
            line_weights=np.where(used, w_line, np.nan),
            extras={"source_hits": s, "target_hits": t, "sigma": sigma, "rho": rho},
        )

    def line_terms(self, transform: RigidTransform, chords) -> list[LineTerm]:
        """Per-chord breakdown of a :meth:`__call__` evaluation (diagnostics only)."""
        chords = ChordSet.from_chords(chords)
        report = self(transform, chords)
        s, t = report.extras["source_hits"], report.extras["target_hits"]
        sigma, rho = report.extras["sigma"], report.extras["rho"]
        terms = []
        for c in np.nonzero(np.isfinite(report.line_weights))[0]:
            si = np.nonzero(s.chord_ids == c)[0]
            ti = np.nonzero(t.chord_ids == c)[0]
            pairs = [(0, int(i - si[0]), int(sigma[i] - ti[0])) for i in si]
            pairs += [(1, int(rho[j] - si[0]), int(j - ti[0])) for j in ti]
            terms.append(LineTerm(chords[int(c)], float(report.line_weights[c]), s.points[si], t.points[ti], pairs))
        return terms


def line_loss(
    transform: RigidTransform,
    source: PointCloud,
    target: PointCloud,
    chords,
    welsch_params: WelschParams | None = None,
    intersection_params: IntersectionParams | tuple[IntersectionParams, IntersectionParams] | None = None,
) -> LossReport:
    """One-shot line loss; a single ``intersection_params`` applies to both clouds."""
    if isinstance(intersection_params, IntersectionParams):
        intersection_params = (intersection_params, intersection_params)
    sp, tp = intersection_params if intersection_params is not None else (None, None)
    return LineLoss(source, target, welsch_params, sp, tp)(transform, chords)


class ChamferLoss:
    """Bidirectional closest-point objective normalised by ``m + n``."""

    def __init__(self, source: PointCloud, target: PointCloud, metric=ChamferMetric.SQUARED_L2, welsch_params: WelschParams | None = None):
        self.source = source
        self.target = target
        self.metric = ChamferMetric(metric)
        self.welsch_params = welsch_params or WelschParams()
        self._target_index = SpatialIndex(target)

    def __call__(self, transform: RigidTransform) -> LossReport:
        moved = transform.apply(self.source.points)
        d_fwd, sigma = self._target_index.nearest(moved)
        d_bwd, rho = SpatialIndex(moved).nearest(self.target.points)
        src = np.vstack([self.source.points, self.source.points[rho]])
        dst = np.vstack([self.target.points[sigma], self.target.points])
        dist = np.concatenate([d_fwd, d_bwd])
        coef = np.full(dist.shape[0], 1.0 / dist.shape[0])
        d_med = float(np.median(dist))
        if self.metric is ChamferMetric.SQUARED_L2:
            nu = None
            value = float(np.dot(coef, dist * dist))
        else:
            nu = self.welsch_params.scale(d_med)
            value = float(np.dot(coef, welsch(dist, nu)))
        objective = PairObjective(src, dst, coef, nu)
        n = len(self.source) + len(self.target)
        return LossReport(value, objective.gradient(transform), n, 0, d_med, nu, objective)


def chamfer_loss(
    transform: RigidTransform,
    source: PointCloud,
    target: PointCloud,
    metric=ChamferMetric.SQUARED_L2,
    welsch_params: WelschParams | None = None,
) -> LossReport:
    return ChamferLoss(source, target, metric, welsch_params)(transform)


def gradient_check(loss_fn, transform: RigidTransform, step: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``loss_fn(T)`` returns a :class:`LossReport`; differences are taken on its
    frozen :class:`PairObjective`, so matches, weights and scale stay fixed.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    report = loss_fn(transform)
    objective = report.objective
    worst = 0.0
    for k in range(6):
        e = np.zeros(6)
        e[k] = step
        numeric = (objective.value_at_step(transform, e) - objective.value_at_step(transform, -e)) / (2.0 * step)
        err = abs(report.gradient[k] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst

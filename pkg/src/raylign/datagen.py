"""Synthetic benchmark pairs: unit scaling, partial-view crops, random rigid perturbations."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform, farthest_point_indices
from .lines import make_rng


class CropKind(str, enum.Enum):
    NONE = "none"
    HALF_SPACE = "half-space"
    CONE = "cone"


class OverlapInfeasibleError(ValueError):
    pass


@dataclass
class PairSpec:
    rotation_max_deg: float = 45.0
    translation_range: float = 0.2
    crop: CropKind = CropKind.NONE
    overlap: float = 0.7
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    points: int = 1024
    seed: int = 0

    def __post_init__(self):
        self.crop = CropKind(self.crop)
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.points < 1 or self.rotation_max_deg < 0 or self.translation_range < 0:
            raise ValueError("points, rotation_max_deg and translation_range must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop"] = self.crop.value
        return d


@dataclass(frozen=True)
class ScaleRecord:
    """``scaled = (original - center) / scale``."""

    center: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) / self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.scale + self.center


@dataclass
class BenchmarkPair:
    source: PointCloud
    target: PointCloud
    gt: RigidTransform
    provenance: PairSpec
    source_outliers: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))


def unit_scale(cloud: PointCloud) -> tuple[PointCloud, ScaleRecord]:
    """Center the bounding box at the origin and fit the longest side to [-1, 1]."""
    pts = cloud.points
    if pts.shape[0] == 0:
        raise ValueError("cannot scale an empty cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    half = float(np.max(hi - lo)) / 2.0
    if half <= 0.0:
        raise ValueError("cloud has zero extent")
    record = ScaleRecord(0.5 * (lo + hi), half)
    return PointCloud(record.apply(pts), cloud.normals), record


def euler_zyx(z_deg: float, y_deg: float, x_deg: float) -> np.ndarray:
    """``Rz(z) @ Ry(y) @ Rx(x)`` from angles in degrees."""
    a, b, c = np.radians([z_deg, y_deg, x_deg])
    Rz = np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[math.cos(b), 0.0, math.sin(b)], [0.0, 1.0, 0.0], [-math.sin(b), 0.0, math.cos(b)]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(c), -math.sin(c)], [0.0, math.sin(c), math.cos(c)]])
    return Rz @ Ry @ Rx


def random_euler_angles(spec: PairSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, spec.rotation_max_deg, 3)


def random_transform(spec: PairSpec, rng: np.random.Generator) -> RigidTransform:
    angles = random_euler_angles(spec, rng)
    t = rng.uniform(-spec.translation_range, spec.translation_range, 3)
    return RigidTransform(euler_zyx(*angles), t)


def _crop_score(points: np.ndarray, direction: np.ndarray, kind: CropKind) -> np.ndarray:
    if kind is CropKind.HALF_SPACE:
        return points @ direction
    rel = points - points.mean(axis=0)
    norms = np.linalg.norm(rel, axis=1)
    return (rel @ direction) / np.where(norms > 0, norms, 1.0)


def crop_pair_indices(points: np.ndarray, direction: np.ndarray, overlap: float, kind: CropKind) -> tuple[np.ndarray, np.ndarray]:
    """Source keeps the low-score end, target the high-score end.

    Each keeps a fraction ``f = 1 / (2 - overlap)`` of the points, so the shared
    band ``2f - 1`` is an ``overlap`` fraction of either view.
    """
    n = points.shape[0]
    if kind is CropKind.NONE:
        all_idx = np.arange(n)
        return all_idx, all_idx
    keep = int(round(n / (2.0 - overlap)))
    order = np.argsort(_crop_score(points, direction, kind), kind="stable")
    return np.sort(order[:keep]), np.sort(order[n - keep :])


def make_pair(base: PointCloud, spec: PairSpec) -> BenchmarkPair:
    """Build one pair; ``gt`` maps the source onto the target.

    Each view is subsampled to ``spec.points`` by FPS, or keeps every point when
    its crop is smaller than that.
    """
    scaled, _ = unit_scale(base)
    rng = make_rng(spec.seed)
    gt = random_transform(spec, rng)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)

    src_idx, tgt_idx = crop_pair_indices(scaled.points, direction, spec.overlap, spec.crop)
    if min(src_idx.size, tgt_idx.size) < spec.points / 2:
        raise OverlapInfeasibleError(f"crop keeps {min(src_idx.size, tgt_idx.size)} points, need at least {spec.points / 2}")
    src_view = scaled.subset(src_idx)
    tgt_view = scaled.subset(tgt_idx)
    target = tgt_view.subset(farthest_point_indices(tgt_view.points, spec.points, spec.seed))
    source_in_target_frame = src_view.subset(farthest_point_indices(src_view.points, spec.points, spec.seed))
    source_pts = gt.inverse().apply(source_in_target_frame.points)

    if spec.noise_sigma > 0:
        source_pts = source_pts + rng.normal(scale=spec.noise_sigma, size=source_pts.shape)
    outliers = np.empty(0, dtype=np.intp)
    if spec.outlier_fraction > 0:
        n_out = int(round(spec.outlier_fraction * source_pts.shape[0]))
        outliers = np.sort(rng.choice(source_pts.shape[0], size=n_out, replace=False))
        source_pts = source_pts.copy()
        source_pts[outliers] = rng.uniform(-1.0, 1.0, (n_out, 3))
    return BenchmarkPair(PointCloud(source_pts), PointCloud(target.points), gt, spec, outliers)


# --- synthetic base shape -------------------------------------------------

_ELLIPSOIDS = [
    # center, radii
    ((0.0, 0.0, 0.0), (0.34, 0.2, 0.5)),
    ((0.0, 0.0, 0.76), (0.17, 0.19, 0.2)),
    ((0.0, 0.18, 0.74), (0.045, 0.07, 0.05)),
    ((0.1, 0.14, -0.38), (0.2, 0.1, 0.12)),
]
_CAPSULES = [
    # start, end, radius
    ((0.3, 0.0, 0.36), (0.78, 0.12, 0.02), 0.08),
    ((0.78, 0.12, 0.02), (0.86, 0.42, 0.12), 0.07),
    ((-0.3, 0.0, 0.36), (-0.55, 0.25, 0.72), 0.08),
    ((0.14, 0.0, -0.4), (0.2, 0.04, -1.2), 0.1),
    ((-0.14, 0.0, -0.4), (-0.34, 0.3, -1.1), 0.1),
]


def _ellipsoid_surface(center, radii, count, rng):
    u = rng.normal(size=(count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.asarray(center) + u * np.asarray(radii)


def _capsule_surface(p0, p1, radius, count, rng):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis /= length
    e1 = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    n_side = int(count * length / (length + 2.0 * radius))
    t = rng.uniform(0.0, length, n_side)
    ang = rng.uniform(0.0, 2.0 * math.pi, n_side)
    side = p0 + t[:, None] * axis + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    u = rng.normal(size=(count - n_side, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    along = u @ axis
    caps = np.where(along[:, None] >= 0, p1, p0) + radius * u
    return np.vstack([side, caps])


def _inside(points, eps=1e-3):
    inside = np.zeros((points.shape[0], len(_ELLIPSOIDS) + len(_CAPSULES)), dtype=bool)
    for k, (c, r) in enumerate(_ELLIPSOIDS):
        inside[:, k] = np.sum(((points - c) / r) ** 2, axis=1) < 1.0 - eps
    for k, (p0, p1, rad) in enumerate(_CAPSULES, start=len(_ELLIPSOIDS)):
        p0, p1 = np.asarray(p0), np.asarray(p1)
        ax = p1 - p0
        t = np.clip((points - p0) @ ax / (ax @ ax), 0.0, 1.0)
        inside[:, k] = np.linalg.norm(points - (p0 + t[:, None] * ax), axis=1) < rad - eps
    return inside.any(axis=1)


def synthetic_figure(count: int = 8192, seed: int = 0) -> PointCloud:
    """Asymmetric articulated figure (torso, head, limbs) sampled on its outer surface."""
    rng = make_rng(seed)
    pieces = [_ellipsoid_surface(c, r, 4 * count // 6, rng) for c, r in _ELLIPSOIDS]
    pieces += [_capsule_surface(p0, p1, rad, count // 2, rng) for p0, p1, rad in _CAPSULES]
    pts = np.vstack(pieces)
    pts = pts[~_inside(pts)]
    if pts.shape[0] < count:
        raise RuntimeError("surface sampling produced too few points")
    pick = np.sort(rng.choice(pts.shape[0], size=count, replace=False))
    return PointCloud(pts[pick])

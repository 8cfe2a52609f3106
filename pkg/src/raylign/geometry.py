"""Point clouds, rigid transforms on SE(3), spatial indexing and scale statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

# Below this angle the series expansions of the SE(3) exp/log coefficients are used.
_SMALL_ANGLE = 1e-6
_LOG_PI_MARGIN = 1e-6
_RADIUS_FLOOR = 1e-12
SPHERE_INFLATION = 1.05


class DegenerateRotationError(ValueError):
    """Raised when the rotation logarithm is requested too close to angle pi."""


class DegenerateCloudError(ValueError):
    """Raised when a cloud is too small or too degenerate for the requested statistic."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float).reshape(-1, 3))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.ascontiguousarray(np.asarray(self.normals, dtype=float).reshape(-1, 3))
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            if nrm.size and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.intp)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_cloud(self, cloud: PointCloud) -> PointCloud:
        normals = None if cloud.normals is None else cloud.normals @ self.rotation.T
        return PointCloud(self.apply(cloud.points), normals)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass(frozen=True)
class Se3Params:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.array(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.array(self.v, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, xi) -> "Se3Params":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


def _so3_coefficients(theta: float) -> tuple[float, float, float]:
    """A = sin(t)/t, B = (1-cos t)/t^2, C = (t - sin t)/t^3."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = math.sin(theta), math.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def exp_so3(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    K = skew(omega)
    A, B, _ = _so3_coefficients(float(np.linalg.norm(omega)))
    return np.eye(3) + A * K + B * (K @ K)


def exp_se3(xi) -> RigidTransform:
    if not isinstance(xi, Se3Params):
        xi = Se3Params.from_vector(xi)
    K = skew(xi.omega)
    A, B, C = _so3_coefficients(float(np.linalg.norm(xi.omega)))
    K2 = K @ K
    R = np.eye(3) + A * K + B * K2
    V = np.eye(3) + B * K + C * K2
    return RigidTransform(R, V @ xi.v)


def log_so3(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_theta)
    if theta > math.pi - _LOG_PI_MARGIN:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} too close to pi for log")
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * (1.0 + theta * theta / 6.0) * w
    return theta / (2.0 * math.sin(theta)) * w


def log_se3(T: RigidTransform) -> Se3Params:
    omega = log_so3(T.rotation)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        coef = 1.0 / 12.0 + theta * theta / 720.0
    else:
        A, B, _ = _so3_coefficients(theta)
        coef = (1.0 - A / (2.0 * B)) / theta**2
    V_inv = np.eye(3) - 0.5 * K + coef * (K @ K)
    return Se3Params(omega, V_inv @ T.translation)


@dataclass(frozen=True)
class BoundingSphere:
    center: np.ndarray
    radius: float

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        d = np.linalg.norm(np.asarray(points, dtype=float).reshape(-1, 3) - self.center, axis=1)
        return d <= self.radius + tol


def bounding_sphere(a: PointCloud, b: PointCloud, inflation: float = SPHERE_INFLATION) -> BoundingSphere:
    pts = np.vstack([a.points, b.points])
    if pts.shape[0] == 0:
        raise DegenerateCloudError("bounding sphere of empty clouds")
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    radius = float(np.max(np.linalg.norm(pts - center, axis=1))) * inflation
    return BoundingSphere(center, max(radius, _RADIUS_FLOOR))


class SpatialIndex:
    """Exact k-nearest-neighbour index; equal-distance ties resolve to the smaller point index.

    Read-only after construction, so concurrent queries are safe.
    """

    def __init__(self, cloud: PointCloud | np.ndarray):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, p, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(distances, indices)`` of the ``min(k, n)`` nearest points to ``p``."""
        n = len(self)
        k = min(int(k), n)
        if k <= 0:
            return np.empty(0), np.empty(0, dtype=np.intp)
        p = np.asarray(p, dtype=float).reshape(3)
        kk = min(k + 1, n)
        d, idx = self._tree.query(p, k=kk)
        d, idx = np.atleast_1d(d), np.atleast_1d(idx)
        if kk > k and d[k] > d[k - 1]:
            d, idx = d[:k], idx[:k]
        else:
            # a tie may straddle the k-th slot: gather every point at that radius
            radius = d[k - 1]
            idx = np.asarray(self._tree.query_ball_point(p, radius * (1 + 1e-12) + 1e-300), dtype=np.intp)
            d = np.linalg.norm(self.points[idx] - p, axis=1)
        exact = np.linalg.norm(self.points[idx] - p, axis=1)
        order = np.lexsort((idx, exact))[:k]
        return exact[order], idx[order]

    def query_many(self, points, k: int) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        k = min(int(k), len(self))
        dist = np.empty((pts.shape[0], k))
        idx = np.empty((pts.shape[0], k), dtype=np.intp)
        if k == 0:
            return dist, idx
        # bulk query, then fall back to the tie-exact path only where needed
        kk = min(k + 1, len(self))
        d, i = self._tree.query(pts, k=kk)
        d = d.reshape(pts.shape[0], kk)
        i = i.reshape(pts.shape[0], kk)
        d_exact = np.linalg.norm(self.points[i] - pts[:, None, :], axis=2)
        clean = np.full(pts.shape[0], kk > k)
        if kk > k:
            clean &= d_exact[:, k] > d_exact[:, :k].max(axis=1)
        rows = np.nonzero(clean)[0]
        order = np.lexsort((i[rows, :k], d_exact[rows, :k]), axis=-1)
        dist[rows] = np.take_along_axis(d_exact[rows, :k], order, axis=1)
        idx[rows] = np.take_along_axis(i[rows, :k], order, axis=1)
        for r in np.nonzero(~clean)[0]:
            dist[r], idx[r] = self.query(pts[r], k)
        return dist, idx

    def nearest(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Single nearest neighbour for many query points (no tie handling)."""
        d, i = self._tree.query(np.asarray(points, dtype=float).reshape(-1, 3), k=1)
        return d, i


def neighbor_table(cloud: PointCloud, k: int, index: SpatialIndex | None = None) -> tuple[np.ndarray, np.ndarray]:
    """k nearest neighbours of every cloud point, excluding the point itself."""
    n = len(cloud)
    if n <= k:
        raise DegenerateCloudError(f"need more than {k} points, got {n}")
    index = index or SpatialIndex(cloud)
    d, idx = index.query_many(cloud.points, k + 1)
    out_d = np.empty((n, k))
    out_i = np.empty((n, k), dtype=np.intp)
    for r in range(n):
        keep = idx[r] != r
        if keep.all():
            keep[-1] = False
        out_d[r] = d[r][keep]
        out_i[r] = idx[r][keep]
    return out_d, out_i


def knn_stats(cloud: PointCloud, k: int, index: SpatialIndex | None = None) -> float:
    """Mean over points of the mean distance to their ``k`` nearest neighbours."""
    d, _ = neighbor_table(cloud, k, index)
    return float(d.mean())


def median_pair_distance(pairs) -> float:
    """Median l2 distance over ``(x, y)`` pairs (or an ``(n, 2, 3)`` array)."""
    arr = np.asarray(pairs, dtype=float)
    if arr.size == 0:
        raise ValueError("median of an empty pair list")
    arr = arr.reshape(-1, 2, 3)
    return float(np.median(np.linalg.norm(arr[:, 0] - arr[:, 1], axis=1)))


def farthest_point_sample(cloud: PointCloud, count: int, seed: int) -> PointCloud:
    return cloud.subset(farthest_point_indices(cloud.points, count, seed))


def farthest_point_indices(points: np.ndarray, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    count = min(count, n)
    rng = np.random.Generator(np.random.Philox(seed))
    chosen = np.empty(count, dtype=np.intp)
    chosen[0] = rng.integers(n)
    min_d = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        np.minimum(min_d, np.sum((points - points[nxt]) ** 2, axis=1), out=min_d)
    return chosen


def estimate_normals(cloud: PointCloud, k: int = 10) -> PointCloud:
    """PCA normals over the k nearest neighbours, oriented away from the centroid."""
    pts = cloud.points
    k = min(k, len(cloud) - 1)
    if k < 2:
        raise DegenerateCloudError("normal estimation needs at least 3 points")
    _, idx = SpatialIndex(cloud).query_many(pts, k + 1)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    outward = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)


def as_points(x: PointCloud | Sequence | np.ndarray) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=float).reshape(-1, 3)

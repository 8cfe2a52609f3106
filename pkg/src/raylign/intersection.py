"""Soft intersection of chords with a discrete point cloud.

Every cloud point inside the closed cylinder of radius ``delta`` around a chord
segment is a candidate.  A candidate whose ``k`` nearest cloud neighbours are
all candidates too emits one intersection point: the convex combination of the
candidate and those neighbours, weighted by each point's distance to the line.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import DegenerateCloudError, PointCloud, SpatialIndex, as_points, knn_stats, neighbor_table
from .lines import Chord, ChordSet

DEFAULT_K = 2


class IntersectionMode(str, enum.Enum):
    CONVEX_COMBINATION = "convex-combination"
    ALL_CANDIDATES = "all-candidates"


class Weighting(str, enum.Enum):
    DISTANCE = "distance"
    INVERSE_DISTANCE = "inverse-distance"


@dataclass(frozen=True)
class IntersectionParams:
    delta: float
    k: int = DEFAULT_K
    mode: IntersectionMode = IntersectionMode.CONVEX_COMBINATION
    weighting: Weighting = Weighting.DISTANCE

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "mode", IntersectionMode(self.mode))
        object.__setattr__(self, "weighting", Weighting(self.weighting))


def default_params(cloud: PointCloud, k: int = DEFAULT_K, index: SpatialIndex | None = None, **kw) -> IntersectionParams:
    d_nei = knn_stats(cloud, k, index)
    if d_nei <= 0.0:
        raise DegenerateCloudError("all points coincide: neighbour distance is zero")
    return IntersectionParams(delta=math.sqrt(3.0) / 2.0 * d_nei, k=k, **kw)


@dataclass(frozen=True)
class IntersectionSet:
    """Intersections of one chord with one cloud, ordered along the chord.

    ``source_indices[i]`` lists the cloud points combined into ``points[i]`` with
    barycentric ``weights[i]``; row 0 is the candidate itself.
    """

    points: np.ndarray
    source_indices: np.ndarray
    weights: np.ndarray
    params: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class BatchIntersections:
    """Intersections of many chords with one cloud, grouped by chord then ordered along it."""

    chord_ids: np.ndarray
    points: np.ndarray
    source_indices: np.ndarray
    weights: np.ndarray
    params: np.ndarray
    counts: np.ndarray

    def for_chord(self, c: int) -> IntersectionSet:
        lo = int(np.searchsorted(self.chord_ids, c, side="left"))
        hi = int(np.searchsorted(self.chord_ids, c, side="right"))
        return IntersectionSet(self.points[lo:hi], self.source_indices[lo:hi], self.weights[lo:hi], self.params[lo:hi])


def build_blocks(points: np.ndarray, leaf_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Median-split the cloud into spatially compact blocks.

    Returns a permutation of point indices and the block start offsets into it
    (length ``n_blocks + 1``).  Rigid motions preserve the partition, so a
    cloud's blocks can be built once and reused after transforming it.
    """
    points = np.asarray(points, dtype=float)
    order = np.arange(points.shape[0])
    leaves = []
    stack = [order]
    while stack:
        ids = stack.pop()
        if ids.size <= leaf_size:
            leaves.append(ids)
            continue
        sub = points[ids]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        split = np.argsort(sub[:, axis], kind="stable")
        half = ids.size // 2
        stack.append(ids[split[half:]])
        stack.append(ids[split[:half]])
    perm = np.concatenate(leaves) if leaves else order
    starts = np.zeros(len(leaves) + 1, dtype=np.int64)
    starts[1:] = np.cumsum([leaf.size for leaf in leaves])
    return perm.astype(np.int64), starts


@numba.njit(cache=True)
def _block_bounds(pts, perm, starts):
    nb = starts.shape[0] - 1
    centers = np.zeros((nb, 3))
    radii = np.zeros(nb)
    for b in range(nb):
        lo, hi = starts[b], starts[b + 1]
        for s in range(lo, hi):
            for q in range(3):
                centers[b, q] += pts[perm[s], q]
        for q in range(3):
            centers[b, q] /= max(hi - lo, 1)
        r2 = 0.0
        for s in range(lo, hi):
            e = 0.0
            for q in range(3):
                e += (pts[perm[s], q] - centers[b, q]) ** 2
            r2 = max(r2, e)
        radii[b] = math.sqrt(r2)
    return centers, radii


@numba.njit(cache=True)
def _scan_chord(a, d, length, pts, perm, starts, centers, radii, delta, stamp, stamp_value, perp, out):
    """Fill ``out`` with candidate indices for one chord; return how many."""
    delta2 = delta * delta
    count = 0
    for b in range(radii.shape[0]):
        # conservative cull: block ball farther than delta from the segment
        w0 = centers[b, 0] - a[0]
        w1 = centers[b, 1] - a[1]
        w2 = centers[b, 2] - a[2]
        t = min(max(w0 * d[0] + w1 * d[1] + w2 * d[2], 0.0), length)
        r0 = w0 - t * d[0]
        r1 = w1 - t * d[1]
        r2 = w2 - t * d[2]
        reach = radii[b] + delta + 1e-9
        if r0 * r0 + r1 * r1 + r2 * r2 > reach * reach:
            continue
        for s in range(starts[b], starts[b + 1]):
            j = perm[s]
            w0 = pts[j, 0] - a[0]
            w1 = pts[j, 1] - a[1]
            w2 = pts[j, 2] - a[2]
            t = w0 * d[0] + w1 * d[1] + w2 * d[2]
            if t < 0.0 or t > length:
                continue
            r0 = w0 - t * d[0]
            r1 = w1 - t * d[1]
            r2 = w2 - t * d[2]
            p2 = r0 * r0 + r1 * r1 + r2 * r2
            if p2 <= delta2:
                stamp[j] = stamp_value
                perp[j] = math.sqrt(p2)
                out[count] = j
                count += 1
    return count


@numba.njit(cache=True)
def _candidates_kernel(a, b, pts, perm, starts, delta):
    n = pts.shape[0]
    length = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
    d = (b - a) / length
    stamp = np.zeros(n, np.int64)
    perp = np.zeros(n)
    out = np.empty(n, np.int64)
    centers, radii = _block_bounds(pts, perm, starts)
    count = _scan_chord(a, d, length, pts, perm, starts, centers, radii, delta, stamp, 1, perp, out)
    return out[:count].copy(), perp[out[:count]]


@numba.njit(cache=True)
def _intersect_kernel(A, B, pts, perm, starts, nbr, delta, all_candidates, inverse):
    n_chords = A.shape[0]
    n = pts.shape[0]
    k1 = nbr.shape[1] + 1
    stamp = np.zeros(n, np.int64)
    perp = np.zeros(n)
    cand = np.empty(n, np.int64)
    centers, radii = _block_bounds(pts, perm, starts)
    cap = max(16, 4 * n_chords)
    chord_ids = np.empty(cap, np.int64)
    idx = np.empty((cap, k1), np.int64)
    beta = np.empty((cap, k1))
    out_pts = np.empty((cap, 3))
    par = np.empty(cap)
    size = 0
    grp = np.empty(k1, np.int64)
    wts = np.empty(k1)
    a = np.empty(3)
    d = np.empty(3)
    for c in range(n_chords):
        for q in range(3):
            a[q] = A[c, q]
            d[q] = B[c, q] - A[c, q]
        length = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        for q in range(3):
            d[q] /= length
        m = _scan_chord(a, d, length, pts, perm, starts, centers, radii, delta, stamp, c + 1, perp, cand)
        for ci in range(m):
            j = cand[ci]
            grp[0] = j
            ok = True
            for q in range(k1 - 1):
                nb = nbr[j, q]
                grp[q + 1] = nb
                if stamp[nb] != c + 1:
                    ok = False
            if all_candidates:
                for q in range(k1):
                    grp[q] = j
                    wts[q] = 0.0
                wts[0] = 1.0
            else:
                if not ok:
                    continue
                total = 0.0
                if inverse:
                    n_zero = 0
                    for q in range(k1):
                        if perp[grp[q]] == 0.0:
                            n_zero += 1
                    for q in range(k1):
                        if n_zero > 0:
                            wts[q] = 1.0 if perp[grp[q]] == 0.0 else 0.0
                        else:
                            wts[q] = 1.0 / perp[grp[q]]
                        total += wts[q]
                else:
                    for q in range(k1):
                        wts[q] = perp[grp[q]]
                        total += wts[q]
                if total > 0.0:
                    for q in range(k1):
                        wts[q] /= total
                else:
                    for q in range(k1):
                        wts[q] = 1.0 / k1
            if size == cap:
                cap *= 2
                chord_ids2 = np.empty(cap, np.int64)
                chord_ids2[:size] = chord_ids[:size]
                chord_ids = chord_ids2
                idx2 = np.empty((cap, k1), np.int64)
                idx2[:size] = idx[:size]
                idx = idx2
                beta2 = np.empty((cap, k1))
                beta2[:size] = beta[:size]
                beta = beta2
                pts2 = np.empty((cap, 3))
                pts2[:size] = out_pts[:size]
                out_pts = pts2
                par2 = np.empty(cap)
                par2[:size] = par[:size]
                par = par2
            x0 = 0.0
            x1 = 0.0
            x2 = 0.0
            for q in range(k1):
                x0 += wts[q] * pts[grp[q], 0]
                x1 += wts[q] * pts[grp[q], 1]
                x2 += wts[q] * pts[grp[q], 2]
                idx[size, q] = grp[q]
                beta[size, q] = wts[q]
            chord_ids[size] = c
            out_pts[size, 0] = x0
            out_pts[size, 1] = x1
            out_pts[size, 2] = x2
            par[size] = (x0 - a[0]) * d[0] + (x1 - a[1]) * d[1] + (x2 - a[2]) * d[2]
            size += 1
    return chord_ids[:size], idx[:size], beta[:size], out_pts[:size], par[:size]


def candidate_points(chord: Chord, cloud, index: SpatialIndex | None = None, delta: float = 0.0) -> np.ndarray:
    """Indices of cloud points in the closed cylinder of radius ``delta`` around the chord segment.

    ``index`` is accepted for interface symmetry with :func:`intersect`; the scan is exhaustive.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts = np.ascontiguousarray(as_points(cloud))
    perm, starts = build_blocks(pts)
    idx, _ = _candidates_kernel(np.asarray(chord.a, float), np.asarray(chord.b, float), pts, perm, starts, float(delta))
    return np.sort(idx)


def intersect_batch(
    chords: ChordSet,
    points: np.ndarray,
    neighbors: np.ndarray,
    params: IntersectionParams,
    blocks: tuple[np.ndarray, np.ndarray] | None = None,
) -> BatchIntersections:
    """Intersect every chord with the cloud ``points`` given its neighbour table ``neighbors`` (n, k).

    ``blocks`` is a :func:`build_blocks` partition of the cloud, built on demand when omitted.
    """
    chords = ChordSet.from_chords(chords)
    points = np.ascontiguousarray(points, dtype=float)
    perm, starts = blocks if blocks is not None else build_blocks(points)
    neighbors = np.ascontiguousarray(neighbors[:, : params.k], dtype=np.int64)
    ids, idx, beta, pts, par = _intersect_kernel(
        np.ascontiguousarray(chords.a, dtype=float),
        np.ascontiguousarray(chords.b, dtype=float),
        points,
        perm,
        starts,
        neighbors,
        float(params.delta),
        params.mode is IntersectionMode.ALL_CANDIDATES,
        params.weighting is Weighting.INVERSE_DISTANCE,
    )
    order = np.lexsort((par, ids))
    counts = np.bincount(ids, minlength=len(chords))
    return BatchIntersections(ids[order], pts[order], idx[order], beta[order], par[order], counts)


def intersect(chord: Chord, cloud: PointCloud, index: SpatialIndex | None, params: IntersectionParams) -> IntersectionSet:
    _, nbr = neighbor_table(cloud, params.k, index)
    return intersect_batch(ChordSet.from_chords([chord]), cloud.points, nbr, params).for_chord(0)

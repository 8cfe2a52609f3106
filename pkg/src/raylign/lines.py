"""Random straight lines through the bounding sphere of two clouds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundingSphere, PointCloud

MAX_RESAMPLE = 100


class SamplerKind(str, enum.Enum):
    SPHERE_CHORD = "sphere-chord"
    BOX_POINT_DIRECTION = "box-point-direction"
    CLOUD_PAIR_PERTURBED = "cloud-pair-perturbed"


class DegenerateChordError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator, so streams match across platforms for a given seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class Chord:
    a: np.ndarray
    b: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def direction(self) -> np.ndarray:
        return (self.b - self.a) / self.length


@dataclass(frozen=True)
class ChordSet:
    """A batch of chords stored as endpoint arrays of shape ``(count, 3)``."""

    a: np.ndarray
    b: np.ndarray

    def __len__(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, i: int) -> Chord:
        return Chord(self.a[i].copy(), self.b[i].copy())

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_chords(cls, chords) -> "ChordSet":
        if isinstance(chords, ChordSet):
            return chords
        if isinstance(chords, Chord):
            chords = [chords]
        chords = list(chords)
        a = np.array([c.a for c in chords], dtype=float).reshape(-1, 3)
        b = np.array([c.b for c in chords], dtype=float).reshape(-1, 3)
        return cls(a, b)

    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.b - self.a, axis=1)

    def directions(self) -> np.ndarray:
        return (self.b - self.a) / self.lengths()[:, None]

    def transformed(self, T) -> "ChordSet":
        return ChordSet(T.apply(self.a), T.apply(self.b))


def sphere_point(sphere: BoundingSphere, u: float, alpha: float) -> np.ndarray:
    s = math.sqrt(max(0.0, 1.0 - u * u))
    r = sphere.radius
    return sphere.center + np.array([r * s * math.cos(alpha), r * s * math.sin(alpha), r * u])


def sample_sphere_points(sphere: BoundingSphere, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``u`` in [-1, 1] and azimuth in [0, 2pi); area-uniform since u is the polar cosine."""
    u = rng.uniform(-1.0, 1.0, count)
    alpha = rng.uniform(0.0, 2.0 * math.pi, count)
    s = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    unit = np.stack([s * np.cos(alpha), s * np.sin(alpha), u], axis=1)
    return sphere.center + sphere.radius * unit


def sample_sphere_point(sphere: BoundingSphere, rng: np.random.Generator) -> np.ndarray:
    return sample_sphere_points(sphere, 1, rng)[0]


def _unit_directions(count: int, rng: np.random.Generator) -> np.ndarray:
    return sample_sphere_points(BoundingSphere(np.zeros(3), 1.0), count, rng)


def _ball_offsets(count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    return _unit_directions(count, rng) * (radius * rng.uniform(0.0, 1.0, count) ** (1.0 / 3.0))[:, None]


def _draw(sphere, count, kind, clouds, rng, perturbation):
    r = sphere.radius
    if kind is SamplerKind.SPHERE_CHORD:
        return sample_sphere_points(sphere, count, rng), sample_sphere_points(sphere, count, rng)
    if kind is SamplerKind.BOX_POINT_DIRECTION:
        p = sphere.center + rng.uniform(-r, r, (count, 3))
        d = _unit_directions(count, rng)
        return p - 2.0 * r * d, p + 2.0 * r * d
    if kind is SamplerKind.CLOUD_PAIR_PERTURBED:
        if clouds is None:
            raise ValueError("cloud-pair sampler needs the two clouds")
        src, tgt = (c.points if isinstance(c, PointCloud) else np.asarray(c) for c in clouds)
        a = src[rng.integers(src.shape[0], size=count)] + _ball_offsets(count, perturbation * r, rng)
        b = tgt[rng.integers(tgt.shape[0], size=count)] + _ball_offsets(count, perturbation * r, rng)
        return a, b
    raise ValueError(f"unknown sampler {kind!r}")


def sample_chords(
    sphere: BoundingSphere,
    count: int,
    kind: SamplerKind | str = SamplerKind.SPHERE_CHORD,
    clouds: tuple | None = None,
    rng: np.random.Generator | int = 0,
    perturbation: float = 0.05,
) -> ChordSet:
    """Draw ``count`` chords; ``perturbation`` is the cloud-pair jitter radius relative to the sphere radius."""
    if count < 1:
        raise ValueError("chord count must be >= 1")
    kind = SamplerKind(kind)
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    a, b = _draw(sphere, count, kind, clouds, rng, perturbation)
    min_len = 1e-9 * sphere.radius
    for _ in range(MAX_RESAMPLE):
        bad = np.nonzero(np.linalg.norm(b - a, axis=1) <= min_len)[0]
        if bad.size == 0:
            return ChordSet(a, b)
        a[bad], b[bad] = _draw(sphere, bad.size, kind, clouds, rng, perturbation)
    raise DegenerateChordError(f"could not draw non-degenerate chords after {MAX_RESAMPLE} retries")

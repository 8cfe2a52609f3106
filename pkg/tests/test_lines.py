import math

import numpy as np
import pytest
from scipy import stats

from raylign.geometry import BoundingSphere, PointCloud
from raylign.lines import (
    ChordSet,
    SamplerKind,
    make_rng,
    sample_chords,
    sample_sphere_points,
    sphere_point,
)

UNIT = BoundingSphere(np.zeros(3), 1.0)


def equal_area_cells(unit_points, bands=4, sectors=12):
    """Cell id in a (z band) x (azimuth sector) grid; z-bands of equal height have equal area."""
    z = np.clip(unit_points[:, 2], -1.0, np.nextafter(1.0, 0.0))
    band = np.floor((z + 1.0) / 2.0 * bands).astype(int)
    az = np.mod(np.arctan2(unit_points[:, 1], unit_points[:, 0]), 2 * math.pi)
    sector = np.minimum((az / (2 * math.pi) * sectors).astype(int), sectors - 1)
    return band * sectors + sector


def test_sphere_points_chi_square():
    pts = sample_sphere_points(UNIT, 100_000, make_rng(2024))
    counts = np.bincount(equal_area_cells(pts), minlength=48)
    assert counts.size == 48
    _, p = stats.chisquare(counts)
    print(f"chi-square p = {p:.4f}")
    assert p > 0.001


def test_sphere_points_lie_on_sphere(rng):
    sphere = BoundingSphere(np.array([1.0, -2.0, 0.5]), 3.7)
    pts = sample_sphere_points(sphere, 1000, make_rng(1))
    np.testing.assert_allclose(np.linalg.norm(pts - sphere.center, axis=1), 3.7, rtol=1e-14)


@pytest.mark.parametrize(
    "u, alpha, expected",
    [(1.0, 0.0, [0, 0, 1]), (-1.0, 1.3, [0, 0, -1]), (0.0, 0.0, [1, 0, 0]), (0.0, math.pi / 2, [0, 1, 0])],
)
def test_sphere_point_parametrisation(u, alpha, expected):
    np.testing.assert_allclose(sphere_point(UNIT, u, alpha), expected, atol=1e-15)


@pytest.mark.parametrize("kind", list(SamplerKind))
def test_streams_are_bit_identical(kind, rng):
    clouds = (PointCloud(rng.normal(size=(50, 3))), PointCloud(rng.normal(size=(40, 3))))
    a = sample_chords(UNIT, 500, kind, clouds, rng=7)
    b = sample_chords(UNIT, 500, kind, clouds, rng=7)
    assert a.a.tobytes() == b.a.tobytes() and a.b.tobytes() == b.b.tobytes()
    c = sample_chords(UNIT, 500, kind, clouds, rng=8)
    assert not np.array_equal(a.a, c.a)


def test_sphere_chord_endpoints_on_sphere():
    sphere = BoundingSphere(np.array([0.2, 0.0, -1.0]), 2.0)
    chords = sample_chords(sphere, 200, rng=3)
    for ends in (chords.a, chords.b):
        np.testing.assert_allclose(np.linalg.norm(ends - sphere.center, axis=1), 2.0, rtol=1e-14)
    assert (chords.lengths() > 0).all()


def test_box_sampler_crosses_sphere():
    chords = sample_chords(UNIT, 300, SamplerKind.BOX_POINT_DIRECTION, rng=4)
    np.testing.assert_allclose(chords.lengths(), 4.0, rtol=1e-12)
    mid = (chords.a + chords.b) / 2
    assert (np.abs(mid) <= 1.0).all()


def test_cloud_pair_sampler_near_points(rng):
    src = PointCloud(rng.normal(size=(30, 3)))
    tgt = PointCloud(rng.normal(size=(30, 3)))
    chords = sample_chords(UNIT, 200, "cloud-pair-perturbed", (src, tgt), rng=5, perturbation=0.05)
    da = np.min(np.linalg.norm(chords.a[:, None] - src.points[None], axis=2), axis=1)
    db = np.min(np.linalg.norm(chords.b[:, None] - tgt.points[None], axis=2), axis=1)
    assert (da <= 0.05 + 1e-12).all() and (db <= 0.05 + 1e-12).all()


def test_cloud_pair_sampler_needs_clouds():
    with pytest.raises(ValueError):
        sample_chords(UNIT, 10, SamplerKind.CLOUD_PAIR_PERTURBED)


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        sample_chords(UNIT, 0)


def test_chordset_transform(rng):
    from oracles import random_rigid

    T = random_rigid(rng)
    chords = sample_chords(UNIT, 20, rng=1)
    moved = chords.transformed(T)
    np.testing.assert_allclose(moved.lengths(), chords.lengths(), rtol=1e-12)
    np.testing.assert_allclose(moved.directions(), chords.directions() @ T.rotation.T, atol=1e-12)
    again = ChordSet.from_chords(list(chords))
    np.testing.assert_array_equal(again.a, chords.a)


def test_mean_height_within_three_sigma():
    r = 2.0
    pts = sample_sphere_points(BoundingSphere(np.zeros(3), r), 100_000, make_rng(42))
    sigma = r / math.sqrt(3 * 100_000)
    assert abs(pts[:, 2].mean()) < 3 * sigma


def test_chord_directions_are_symmetric():
    chords = sample_chords(UNIT, 100_000, rng=42)
    assert np.linalg.norm(chords.directions().mean(axis=0)) < 0.01
    np.testing.assert_allclose(np.linalg.norm(chords.directions(), axis=1), 1.0, atol=1e-12)


def test_single_chord():
    assert len(sample_chords(UNIT, 1, rng=42)) == 1

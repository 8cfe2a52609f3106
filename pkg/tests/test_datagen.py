import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raylign.datagen import (
    CropKind,
    OverlapInfeasibleError,
    PairSpec,
    crop_pair_indices,
    euler_zyx,
    make_pair,
    synthetic_figure,
    unit_scale,
)
from raylign.evaluation import rotation_angle
from raylign.geometry import PointCloud


def test_unit_scale_box(rng):
    cloud = PointCloud(rng.uniform([-3, 10, 0], [5, 11, 2], size=(500, 3)))
    scaled, rec = unit_scale(cloud)
    ext = scaled.points.max(axis=0) - scaled.points.min(axis=0)
    assert ext.max() == pytest.approx(2.0)
    np.testing.assert_allclose((scaled.points.max(axis=0) + scaled.points.min(axis=0)) / 2, 0, atol=1e-12)
    np.testing.assert_allclose(rec.invert(scaled.points), cloud.points, atol=1e-12)


def test_unit_scale_rejects_point():
    with pytest.raises(ValueError):
        unit_scale(PointCloud(np.ones((4, 3))))


def test_euler_zyx_single_axes():
    np.testing.assert_allclose(euler_zyx(90, 0, 0) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(euler_zyx(0, 90, 0) @ [0, 0, 1], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(euler_zyx(0, 0, 90) @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_euler_composition_order():
    R = euler_zyx(30, 20, 10)
    np.testing.assert_allclose(R, euler_zyx(30, 0, 0) @ euler_zyx(0, 20, 0) @ euler_zyx(0, 0, 10), atol=1e-15)


@pytest.mark.parametrize("kind", [CropKind.HALF_SPACE, CropKind.CONE])
@pytest.mark.parametrize("overlap", [0.3, 0.7, 1.0])
def test_crop_overlap_fraction(kind, overlap, rng):
    pts = rng.normal(size=(4000, 3))
    d = np.array([0.0, 0.6, 0.8])
    s, t = crop_pair_indices(pts, d, overlap, kind)
    shared = np.intersect1d(s, t).size
    assert s.size == t.size
    assert shared / s.size == pytest.approx(overlap, abs=2e-3)


def test_half_space_crop_split_is_planar(rng):
    pts = rng.normal(size=(1000, 3))
    d = np.array([1.0, 0, 0])
    s, t = crop_pair_indices(pts, d, 0.5, CropKind.HALF_SPACE)
    only_s = np.setdiff1d(s, t)
    only_t = np.setdiff1d(t, s)
    assert pts[only_s, 0].max() < pts[only_t, 0].min()


class TestMakePair:
    def test_gt_maps_source_onto_target_without_crop(self, figure):
        pair = make_pair(figure, PairSpec(points=256, seed=4))
        moved = pair.gt.apply(pair.source.points)
        d = np.min(np.linalg.norm(moved[:, None] - pair.target.points[None], axis=2), axis=1)
        assert d.max() < 1e-12

    def test_ranges(self, figure):
        for seed in range(10):
            pair = make_pair(figure, PairSpec(crop="half-space", seed=seed))
            assert len(pair.source) == len(pair.target) == 1024
            assert np.all(np.abs(pair.gt.translation) <= 0.2)
            # three angles each at most 45 degrees bound the composed angle by 135
            assert rotation_angle(pair.gt.rotation) <= 135
            assert np.abs(pair.target.points).max() <= 1.0 + 1e-12

    def test_deterministic(self, figure):
        spec = PairSpec(crop="cone", noise_sigma=0.01, outlier_fraction=0.1, seed=9)
        a, b = make_pair(figure, spec), make_pair(figure, spec)
        np.testing.assert_array_equal(a.source.points, b.source.points)
        np.testing.assert_array_equal(a.target.points, b.target.points)
        np.testing.assert_array_equal(a.gt.matrix(), b.gt.matrix())

    def test_outliers_recorded(self, figure):
        pair = make_pair(figure, PairSpec(points=500, outlier_fraction=0.2, seed=1))
        assert pair.source_outliers.size == 100
        clean = np.setdiff1d(np.arange(500), pair.source_outliers)
        moved = pair.gt.apply(pair.source.points[clean])
        d = np.min(np.linalg.norm(moved[:, None] - pair.target.points[None], axis=2), axis=1)
        assert d.max() < 1e-12

    def test_infeasible_overlap(self):
        small = synthetic_figure(1500, seed=1)
        # a half-space crop keeps 1500 / 1.9 = 789 points, fewer than 1600 / 2
        with pytest.raises(OverlapInfeasibleError):
            make_pair(small, PairSpec(points=1600, crop="half-space", overlap=0.1))

    def test_small_crop_keeps_every_point(self):
        small = synthetic_figure(1500, seed=1)
        pair = make_pair(small, PairSpec(points=1400, crop="half-space", overlap=0.1))
        assert len(pair.source) == len(pair.target) == round(1500 / 1.9)


@given(st.floats(0, 1), st.floats(-0.5, 0.5))
@settings(max_examples=30, deadline=None)
def test_spec_validation_accepts_valid(overlap, noise):
    if noise < 0:
        with pytest.raises(ValueError):
            PairSpec(overlap=overlap, noise_sigma=noise)
    else:
        assert PairSpec(overlap=overlap, noise_sigma=noise).to_dict()["overlap"] == overlap


def test_synthetic_figure_is_asymmetric():
    fig = synthetic_figure(4000, seed=0)
    assert len(fig) == 4000
    c = fig.points - fig.points.mean(axis=0)
    eig = np.linalg.eigvalsh(c.T @ c / len(c))
    # distinct principal axes rule out the common rotational symmetries
    assert np.min(np.diff(eig)) / eig.max() > 0.05


def test_zero_ranges_give_identity():
    from raylign.datagen import random_transform
    from raylign.lines import make_rng

    T = random_transform(PairSpec(rotation_max_deg=0, translation_range=0), make_rng(0))
    np.testing.assert_array_equal(T.matrix(), np.eye(4))


def test_max_angles_match_independent_construction():
    from scipy.spatial.transform import Rotation

    R = euler_zyx(45, 45, 45)
    ref = Rotation.from_euler("ZYX", [45, 45, 45], degrees=True).as_matrix()
    np.testing.assert_allclose(R, ref, atol=1e-15)
    expected = math.degrees(math.acos((np.trace(ref) - 1) / 2))
    assert rotation_angle(R) == pytest.approx(expected, abs=1e-12)


def test_euler_angles_uniform():
    from scipy import stats

    from raylign.datagen import random_euler_angles
    from raylign.lines import make_rng

    rng = make_rng(3)
    angles = np.array([random_euler_angles(PairSpec(), rng) for _ in range(10_000)])
    for col in angles.T:
        assert stats.kstest(col, "uniform", args=(0, 45)).pvalue > 0.001


def test_half_space_overlap_measured_on_pairs(figure):
    from raylign.geometry import SpatialIndex, knn_stats

    # a 2 d_nei proximity band also counts source points just across the cut,
    # so single pairs read a little high; the mean over pairs sits in range
    fracs = []
    for seed in range(10):
        pair = make_pair(figure, PairSpec(crop="half-space", overlap=0.7, seed=seed))
        moved = pair.gt.apply(pair.source.points)
        d, _ = SpatialIndex(pair.target).nearest(moved)
        fracs.append(np.mean(d <= 2 * knn_stats(pair.target, 2)))
    assert 0.6 <= np.mean(fracs) <= 0.8
    assert min(fracs) >= 0.6


def test_outlier_count_on_1000_points(figure):
    pair = make_pair(figure, PairSpec(points=1000, outlier_fraction=0.1, seed=2))
    assert pair.source_outliers.size == 100


def test_noisy_inliers_within_three_sigma(figure):
    sigma = 0.01
    pair = make_pair(figure, PairSpec(points=400, noise_sigma=sigma, seed=6))
    moved = pair.gt.apply(pair.source.points)
    # without a crop the i-th source point is the noisy copy of the i-th target point
    err = np.linalg.norm(moved - pair.target.points, axis=1)
    assert np.mean(np.all(np.abs(moved - pair.target.points) <= 3 * sigma, axis=1)) > 0.98
    assert err.mean() == pytest.approx(sigma * math.sqrt(8 / math.pi), rel=0.1)

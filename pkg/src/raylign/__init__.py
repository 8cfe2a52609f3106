"""Rigid point-cloud registration driven by random-line intersections."""

from .geometry import (
    BoundingSphere,
    PointCloud,
    RigidTransform,
    Se3Params,
    SpatialIndex,
    bounding_sphere,
    compose,
    exp_se3,
    farthest_point_sample,
    knn_stats,
    log_se3,
    median_pair_distance,
)
from .intersection import IntersectionMode, IntersectionParams, candidate_points, default_params, intersect
from .lines import Chord, SamplerKind, sample_chords, sample_sphere_point
from .loss import ChamferMetric, LineLoss, WelschParams, chamfer_loss, gradient_check, line_loss, welsch
from .solvers import SolverConfig, solve, solve_first_order, solve_icp, solve_svd_surrogate

__all__ = [
    "BoundingSphere", "PointCloud", "RigidTransform", "Se3Params", "SpatialIndex",
    "bounding_sphere", "compose", "exp_se3", "log_se3", "farthest_point_sample", "knn_stats",
    "median_pair_distance", "IntersectionMode", "IntersectionParams", "candidate_points",
    "default_params", "intersect", "Chord", "SamplerKind", "sample_chords", "sample_sphere_point",
    "ChamferMetric", "LineLoss", "WelschParams", "chamfer_loss", "gradient_check", "line_loss",
    "welsch", "SolverConfig", "solve", "solve_first_order", "solve_icp", "solve_svd_surrogate",
]

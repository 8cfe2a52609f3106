"""Registration accuracy metrics and alpha-recall curves."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, RigidTransform, as_points


class RecallMetric(str, enum.Enum):
    PW_L2 = "err_pw_l2"
    PW_L1 = "err_pw_l1"
    T_L2 = "err_t_l2"
    T_L1 = "err_t_l1"
    R_DEG = "err_r_deg"


@dataclass(frozen=True)
class EvalReport:
    err_r_deg: float
    err_t_l1: float
    err_t_l2: float
    err_pw_l1: float
    err_pw_l2: float
    pair_id: str = ""


@dataclass(frozen=True)
class RecallCurve:
    alphas: np.ndarray
    recalls: np.ndarray


def rotation_angle(A) -> float:
    """Rotation angle of ``A`` in degrees, from its trace."""
    c = (np.trace(np.asarray(A, dtype=float)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def evaluate(gt: RigidTransform, est: RigidTransform, source: PointCloud, pair_id: str = "") -> EvalReport:
    pts = as_points(source)
    if pts.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty source cloud")
    dt = gt.translation - est.translation
    diff = gt.apply(pts) - est.apply(pts)
    return EvalReport(
        err_r_deg=rotation_angle(gt.rotation.T @ est.rotation),
        err_t_l1=float(np.abs(dt).sum()),
        err_t_l2=float(np.linalg.norm(dt)),
        err_pw_l1=float(np.abs(diff).sum(axis=1).mean()),
        err_pw_l2=float(np.linalg.norm(diff, axis=1).mean()),
        pair_id=pair_id,
    )


def alpha_recall(reports, alphas, metric: RecallMetric | str = RecallMetric.PW_L2) -> RecallCurve:
    """Fraction of reports whose ``metric`` is strictly below each alpha."""
    reports = list(reports)
    if not reports:
        raise ValueError("alpha_recall needs at least one report")
    metric = RecallMetric(metric)
    values = np.array([getattr(r, metric.value) for r in reports])
    alphas = np.sort(np.asarray(alphas, dtype=float))
    recalls = np.array([np.count_nonzero(values < a) / values.size for a in alphas])
    return RecallCurve(alphas, recalls)


def summarize(reports) -> dict[str, float]:
    """Mean and median of each error field."""
    reports = list(reports)
    out = {}
    for name in ("err_r_deg", "err_t_l1", "err_t_l2", "err_pw_l1", "err_pw_l2"):
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        out[f"mean_{name}"] = float(vals.mean()) if vals.size else math.nan
        out[f"median_{name}"] = float(np.median(vals)) if vals.size else math.nan
    return out

"""
Evaluation module: AbsRel against ground truth and plane-fit accuracy curves.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from core import (
    CameraModel,
    DepthMap,
    NumericalFailure,
    RejectedInputError,
    UndefinedResultError,
    backproject,
)


logger = logging.getLogger(__name__)

REWEIGHT_ROUNDS = 3
TUKEY_SCALE = 3.0


class TraceEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    iteration: int
    count: int
    absrel: Optional[float] = None


class PlaneCurve(BaseModel):
    model_config = ConfigDict(extra='forbid')
    label: int
    point_count: int
    thresholds: List[float] = []
    inlier_fractions: List[float] = []
    normal: Optional[List[float]] = None
    offset: Optional[float] = None
    error: Optional[str] = None

    @field_validator('inlier_fractions')
    @classmethod
    def check_monotone(cls, v):
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError('inlier fractions must be non-decreasing in the threshold')
        return v


class EvalReport(BaseModel):
    model_config = ConfigDict(extra='forbid')
    absrel: Optional[float] = None
    valid_count: int
    z_range: Tuple[float, float]
    trace: List[TraceEntry] = []
    plane_curves: List[PlaneCurve] = []

    @field_validator('absrel')
    @classmethod
    def check_absrel(cls, v):
        if v is not None and v < 0:
            raise ValueError('absrel must be non-negative')
        return v


def absrel(z: DepthMap, z_gt: DepthMap) -> float:
    """
    Mean absolute relative error over pixels valid in both maps.

    Raises:
        RejectedInputError: On shape mismatch
        UndefinedResultError: If no pixel is valid in both
    """
    if z.shape != z_gt.shape:
        raise RejectedInputError(f"Depth maps differ in size: {z.shape} vs {z_gt.shape}")
    both = z.valid & z_gt.valid
    if not both.any():
        raise UndefinedResultError("AbsRel is undefined: no pixel is valid in both maps")
    gt = z_gt.depth[both]
    return float(np.mean(np.abs(z.depth[both] - gt) / gt))


def fit_plane(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Robust plane fit: weighted least squares with Tukey reweighting.

    Returns:
        (unit normal, offset) with normal . x + offset = 0 on the plane

    Raises:
        NumericalFailure: If the points are collinear or too few
    """
    if points.shape[0] < 3:
        raise NumericalFailure(f"Plane fit needs at least 3 points, got {points.shape[0]}")

    weights = np.ones(points.shape[0])
    normal, offset = _weighted_fit(points, weights)
    for _ in range(REWEIGHT_ROUNDS):
        residuals = points @ normal + offset
        scale = max(TUKEY_SCALE * np.median(np.abs(residuals)), 1e-12)
        ratio = residuals / scale
        weights = np.where(np.abs(ratio) < 1.0, (1.0 - ratio ** 2) ** 2, 0.0)
        if np.count_nonzero(weights) < 3:
            break
        try:
            normal, offset = _weighted_fit(points, weights)
        except NumericalFailure:
            # The surviving subset is degenerate; keep the previous fit
            break
    return normal, offset


def _weighted_fit(points: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, float]:
    centroid = np.sum(weights[:, None] * points, axis=0) / weights.sum()
    centered = np.sqrt(weights)[:, None] * (points - centroid)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    if singular[1] <= 1e-9 * max(singular[0], 1e-300):
        raise NumericalFailure("Degenerate point set: points are collinear")
    normal = vt[-1]
    return normal, -float(normal @ centroid)


def plane_accuracy(
    cloud: np.ndarray,
    plane_labels: np.ndarray,
    thresholds: Sequence[float]
) -> List[PlaneCurve]:
    """
    Fraction of each labeled plane's points within each distance of its fit.

    Args:
        cloud: (N, 3) points
        plane_labels: (N,) integer labels; negative labels are ignored
        thresholds: distances in meters

    Returns:
        One PlaneCurve per label; degenerate labels carry an error instead
    """
    thresholds = sorted(float(t) for t in thresholds)
    if cloud.shape[0] != plane_labels.shape[0]:
        raise RejectedInputError("Cloud and labels differ in length")

    curves = []
    for label in np.unique(plane_labels[plane_labels >= 0]):
        points = cloud[plane_labels == label]
        try:
            normal, offset = fit_plane(points)
        except NumericalFailure as e:
            logger.warning(f"Plane {label}: {e}")
            curves.append(PlaneCurve(label=int(label), point_count=points.shape[0], error=str(e)))
            continue

        distances = np.abs(points @ normal + offset)
        fractions = [float(np.mean(distances <= t)) for t in thresholds]
        assert all(b >= a for a, b in zip(fractions, fractions[1:]))
        curves.append(PlaneCurve(
            label=int(label),
            point_count=points.shape[0],
            thresholds=thresholds,
            inlier_fractions=fractions,
            normal=normal.tolist(),
            offset=offset,
        ))
        logger.info(f"Plane {label}: {points.shape[0]} points, fractions {[round(f, 3) for f in fractions]}")
    return curves


def evaluate_reconstruction(
    depth: DepthMap,
    cam: CameraModel,
    gt: Optional[DepthMap] = None,
    labels: Optional[np.ndarray] = None,
    thresholds: Optional[Sequence[float]] = None,
    trace: Optional[Sequence[Tuple[int, int, Optional[float]]]] = None
) -> EvalReport:
    """
    Build the evaluation report of one reconstructed keyframe.

    Args:
        depth: Reconstructed depth
        cam: Keyframe camera
        gt: Ground-truth depth for AbsRel
        labels: (H, W) plane labels (e.g. ground-truth surface ids), -1 unlabeled
        thresholds: Plane-curve distances in meters
        trace: Per-iteration (iteration, count, absrel) records
    """
    report = EvalReport(
        absrel=absrel(depth, gt) if gt is not None else None,
        valid_count=depth.count,
        z_range=depth.z_range,
        trace=[TraceEntry(iteration=i, count=c, absrel=a) for i, c, a in (trace or [])],
    )
    if labels is not None and thresholds:
        points, pixels = backproject(depth, cam, return_pixels=True)
        point_labels = np.asarray(labels).ravel()[pixels]
        report.plane_curves = plane_accuracy(points, point_labels, thresholds)
    return report

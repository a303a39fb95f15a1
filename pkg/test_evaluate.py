"""
Tests for AbsRel, robust plane fitting and the evaluation report.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from config import DensifyConfig
from core import DepthMap, RejectedInputError, UndefinedResultError
from densify import densify_keyframe
from evaluate import (
    EvalReport,
    PlaneCurve,
    absrel,
    evaluate_reconstruction,
    fit_plane,
    plane_accuracy,
)


def depth_of(values, z_range=(0.5, 10.0)):
    values = np.asarray(values, dtype=np.float64)
    return DepthMap(values, np.ones(values.shape, dtype=bool), z_range)


def plane_points(n_side=10, z=0.0):
    xs, ys = np.meshgrid(np.linspace(-1.0, 1.0, n_side), np.linspace(-1.0, 1.0, n_side))
    return np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])


def test_absrel_examples():
    gt = depth_of(np.linspace(1.0, 3.0, 12).reshape(3, 4))
    assert absrel(gt, gt) == 0.0
    assert absrel(depth_of(1.1 * gt.depth), gt) == pytest.approx(0.1)


def test_absrel_is_scale_consistent():
    rng = np.random.default_rng(2)
    gt = rng.uniform(1.0, 3.0, (5, 6))
    z = gt * rng.uniform(0.9, 1.1, gt.shape)
    base = absrel(depth_of(z), depth_of(gt))
    assert absrel(depth_of(2.5 * z), depth_of(2.5 * gt)) == pytest.approx(base)


def test_absrel_uses_co_valid_pixels_only():
    gt = DepthMap(np.array([[2.0, 2.0], [4.0, 0.0]]), np.array([[True, True], [True, False]]), (0.5, 10.0))
    z = DepthMap(np.array([[2.2, 9.0], [4.4, 3.0]]), np.array([[True, False], [True, True]]), (0.5, 10.0))
    # Only (0, 0) and (1, 0) are valid in both maps
    assert absrel(z, gt) == pytest.approx(0.1)


def test_absrel_without_overlap_is_undefined():
    gt = DepthMap(np.array([[2.0, 0.0], [0.0, 3.0]]), np.array([[True, False], [False, True]]), (0.5, 10.0))
    z = DepthMap(np.array([[0.0, 2.0], [3.0, 0.0]]), np.array([[False, True], [True, False]]), (0.5, 10.0))
    with pytest.raises(UndefinedResultError):
        absrel(z, gt)
    with pytest.raises(RejectedInputError):
        absrel(depth_of(np.ones((2, 2))), depth_of(np.ones((3, 2))))


def test_fit_plane_recovers_tilted_plane():
    normal = np.array([0.2, -0.4, 1.0])
    normal /= np.linalg.norm(normal)
    flat = plane_points()
    # Any point p with normal . p = 1.5
    points = flat - (flat @ normal)[:, None] * normal + 1.5 * normal
    fitted, offset = fit_plane(points)
    assert abs(fitted @ normal) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(points @ fitted + offset, 0.0, atol=1e-9)


def test_exact_plane_has_full_fractions():
    curves = plane_accuracy(plane_points(), np.zeros(100, dtype=int), [0.001, 0.01])
    assert len(curves) == 1
    assert curves[0].inlier_fractions == [1.0, 1.0]
    assert curves[0].point_count == 100


def test_single_outlier_is_ignored_by_the_fit():
    t0 = 0.01
    points = np.vstack([plane_points(), [[0.1, 0.1, 2 * t0]]])
    curves = plane_accuracy(points, np.zeros(101, dtype=int), [t0, 3 * t0])
    assert curves[0].inlier_fractions[0] == pytest.approx(100 / 101)
    assert curves[0].inlier_fractions[1] == 1.0


def test_collinear_label_reports_error_and_others_survive():
    line = np.column_stack([np.linspace(0, 1, 5), np.zeros(5), np.zeros(5)])
    points = np.vstack([plane_points(), line])
    labels = np.concatenate([np.zeros(100, dtype=int), np.ones(5, dtype=int)])
    curves = {c.label: c for c in plane_accuracy(points, labels, [0.01])}

    assert curves[0].error is None
    assert curves[0].inlier_fractions == [1.0]
    assert curves[1].error is not None
    assert curves[1].inlier_fractions == []


def test_negative_labels_are_ignored():
    labels = np.full(100, -1)
    labels[:50] = 3
    curves = plane_accuracy(plane_points(), labels, [0.01])
    assert [c.label for c in curves] == [3]
    assert curves[0].point_count == 50


def test_thresholds_are_sorted_and_curves_monotone():
    rng = np.random.default_rng(4)
    points = plane_points(20)
    points[:, 2] += 0.01 * rng.standard_normal(points.shape[0])
    curve = plane_accuracy(points, np.zeros(400, dtype=int), [0.02, 0.005, 0.01])[0]
    assert curve.thresholds == [0.005, 0.01, 0.02]
    assert curve.inlier_fractions == sorted(curve.inlier_fractions)


def test_report_models_reject_broken_invariants():
    with pytest.raises(ValidationError):
        PlaneCurve(label=0, point_count=3, thresholds=[0.1, 0.2], inlier_fractions=[0.8, 0.5])
    with pytest.raises(ValidationError):
        EvalReport(absrel=-0.1, valid_count=1, z_range=(1.0, 2.0))


def test_report_carries_trace_and_counts(keyframe):
    kf = keyframe('tilted_plane')
    report = evaluate_reconstruction(kf.gt.depth, kf.cam, gt=kf.gt.depth,
                                     trace=[(0, 10, 0.05), (1, 200, None)])
    assert report.absrel == 0.0
    assert report.valid_count == kf.gt.depth.count
    assert [entry.count for entry in report.trace] == [10, 200]
    assert report.trace[1].absrel is None
    assert report.plane_curves == []


def test_two_wall_reconstruction_fits_its_planes(keyframe):
    kf = keyframe('two_wall')
    depth, stats = densify_keyframe(kf.seeds, kf.cues, kf.field, kf.meas.intensity,
                                    DensifyConfig(), gt=kf.gt.depth)
    threshold = 0.01 * kf.gt.depth.span
    report = evaluate_reconstruction(depth, kf.cam, gt=kf.gt.depth, labels=kf.gt.surface_id,
                                     thresholds=[threshold / 2, threshold, 2 * threshold],
                                     trace=stats.trace)

    assert {c.label for c in report.plane_curves} == {0, 1}
    for curve in report.plane_curves:
        assert curve.error is None
        assert curve.inlier_fractions[1] >= 0.9
    assert len(report.trace) == len(stats.iterations)

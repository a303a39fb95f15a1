"""
Tests for seed filtering, propagation, estimation, validation, TV smoothing
and the full densification loop.
"""

import numpy as np
import pytest

from config import DensifyConfig
from core import CameraModel, DepthMap
from densify import (
    DensifyState,
    EmptySeedsError,
    Provenance,
    densify_keyframe,
    edge_weights,
    estimate_along_gradient,
    extract_inliers,
    propagate,
    resolve_claims,
    tv_descent,
    tv_objective,
    tv_smooth,
    validate,
)
from evaluate import absrel
from polarization import PolarCues
from prior import disambiguate, normals_from_prior, prior_direction
from synth import sample_sparse_seeds


def uniform_cues(shape, azimuth=0.0, zenith=0.3):
    azimuth = np.broadcast_to(np.asarray(azimuth, dtype=np.float64), shape)
    return PolarCues(
        azimuth=azimuth.copy(),
        zenith=np.full(shape, zenith),
        reflection=np.zeros(shape, dtype=np.int8),
        valid=np.ones(shape, dtype=bool),
    )


def single_seed(shape, row, col, value=2.0, z_range=(1.0, 4.0)):
    depth = np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    depth[row, col], valid[row, col] = value, True
    return DepthMap(depth, valid, z_range)


def test_propagation_fills_the_seed_column():
    state = DensifyState.from_seeds(single_seed((9, 9), 4, 4))
    out = propagate(state, uniform_cues((9, 9)), DensifyConfig())

    assert out.known[:, 4].all()
    assert out.known.sum() == 9
    np.testing.assert_array_equal(out.depth.depth[:, 4], 2.0)
    assert out.provenance[4, 4] == Provenance.SEED
    assert (out.provenance[[0, 1, 2, 3, 5, 6, 7, 8], 4] == Provenance.PROPAGATED).all()


def test_propagation_stops_at_azimuth_step():
    azimuth = np.zeros((9, 9))
    azimuth[5:, :] = np.pi / 2
    state = DensifyState.from_seeds(single_seed((9, 9), 4, 4))
    out = propagate(state, uniform_cues((9, 9), azimuth), DensifyConfig())

    assert out.known[:5, 4].all()
    assert not out.known[5:, :].any()


def test_propagation_does_not_cross_seeds_or_invalid_cues():
    seeds = single_seed((9, 9), 4, 4)
    depth = seeds.depth.copy()
    valid = seeds.valid.copy()
    depth[2, 4], valid[2, 4] = 3.0, True
    state = DensifyState.from_seeds(DepthMap(depth, valid, (1.0, 4.0)))

    cues = uniform_cues((9, 9))
    cue_valid = cues.valid.copy()
    cue_valid[7, 4] = False
    cues = PolarCues(cues.azimuth, cues.zenith, cues.reflection, cue_valid)

    out = propagate(state, cues, DensifyConfig())
    # (3, 4) is one step from both seeds; the smaller source index wins
    assert out.depth.depth[3, 4] == 3.0
    assert out.depth.depth[1, 4] == 3.0
    assert out.depth.depth[6, 4] == 2.0
    assert not out.known[7:, 4].any()


def test_propagation_on_tilted_plane_matches_ground_truth(keyframe):
    kf = keyframe('tilted_plane', warp_kind='identity')
    row, col = kf.cam.height // 2, kf.cam.width // 2
    assert kf.gt.valid[row, col] and kf.cues.valid[row, col]
    seeds = single_seed(kf.cam.shape, row, col, value=kf.gt.depth.depth[row, col], z_range=kf.gt.depth.z_range)

    out = propagate(DensifyState.from_seeds(seeds), kf.cues, DensifyConfig())
    propagated = out.provenance == Provenance.PROPAGATED
    assert propagated.sum() >= kf.cam.height // 2
    relative = np.abs(out.depth.depth[propagated] / kf.gt.depth.depth[propagated] - 1.0)
    assert relative.max() <= 1e-9


def test_resolve_claims_prefers_short_walks_then_small_sources():
    pixels = np.array([5, 5, 7, 7])
    distances = np.array([2.0, 1.0, 1.0, 1.0])
    sources = np.array([0, 1, 9, 3])
    winners = resolve_claims(pixels, distances, sources)
    assert sorted(winners.tolist()) == [1, 3]

    order = np.array([3, 1, 0, 2])
    again = resolve_claims(pixels[order], distances[order], sources[order])
    assert sorted(order[again].tolist()) == [1, 3]


@pytest.mark.parametrize("threads", [2, 8])
def test_propagation_does_not_depend_on_threads(keyframe, threads):
    kf = keyframe('two_plane')
    state = DensifyState.from_seeds(kf.seeds)
    reference = propagate(state, kf.cues, DensifyConfig(), threads=1)
    out = propagate(state, kf.cues, DensifyConfig(), threads=threads)
    np.testing.assert_array_equal(out.depth.depth, reference.depth.depth)
    np.testing.assert_array_equal(out.provenance, reference.provenance)


def test_propagation_does_not_cross_the_crease(keyframe):
    kf = keyframe('two_plane', warp_kind='identity')
    near = kf.gt.surface_id == 0
    seeds = DepthMap(np.where(near, kf.gt.depth.depth, 0.0), near & kf.gt.valid, kf.gt.depth.z_range)
    out = propagate(DensifyState.from_seeds(seeds), kf.cues, DensifyConfig())

    assert out.known.sum() >= seeds.count
    crossed = (out.provenance == Provenance.PROPAGATED) & ~near
    assert not crossed.any()


@pytest.fixture
def camera():
    return CameraModel(50.0, 16.0, 12.0, 33, 25)


def ramp_field(camera, gx=0.0, gy=0.0, base=5.0):
    ys, xs = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    prior = DepthMap.from_array(base + gx * (xs - camera.cx) + gy * (ys - camera.cy))
    return normals_from_prior(prior, camera, 'depth')


def test_estimation_with_matching_zenith_follows_the_prior(camera):
    field = ramp_field(camera, gx=0.05)
    cues = PolarCues(
        azimuth=prior_direction(field),
        zenith=field.zenith_prior.copy(),
        reflection=np.zeros(camera.shape, dtype=np.int8),
        valid=field.valid.copy(),
    )
    zprime = field.zprime.depth
    seeds = single_seed(camera.shape, 12, 16, value=2.0 * zprime[12, 16], z_range=(1.0, 20.0))

    out = estimate_along_gradient(DensifyState.from_seeds(seeds), cues, field, DensifyConfig())
    assert out.known.sum() == 3
    for col in (15, 17):
        assert out.provenance[12, col] == Provenance.ESTIMATED
        assert out.depth.depth[12, col] == pytest.approx(2.0 * zprime[12, col], rel=1e-12)


def test_estimation_with_flat_prior_step_keeps_depth(camera):
    # The prior varies along y only, and the cue azimuth points along x
    field = ramp_field(camera, gy=0.05)
    cues = uniform_cues(camera.shape, azimuth=0.0, zenith=0.3)
    seeds = single_seed(camera.shape, 12, 16, value=3.0, z_range=(1.0, 20.0))

    out = estimate_along_gradient(DensifyState.from_seeds(seeds), cues, field, DensifyConfig())
    assert out.depth.depth[12, 17] == pytest.approx(3.0, rel=1e-12)
    assert out.depth.depth[12, 15] == pytest.approx(3.0, rel=1e-12)


def test_estimation_leaves_known_pixels_alone(camera):
    field = ramp_field(camera, gy=0.05)
    cues = uniform_cues(camera.shape, azimuth=0.0)
    seeds = single_seed(camera.shape, 12, 16, value=3.0, z_range=(1.0, 20.0))
    depth, valid = seeds.depth.copy(), seeds.valid.copy()
    depth[12, 17], valid[12, 17] = 7.0, True
    state = DensifyState.from_seeds(DepthMap(depth, valid, seeds.z_range))

    out = estimate_along_gradient(state, cues, field, DensifyConfig())
    assert out.depth.depth[12, 17] == 7.0
    assert out.provenance[12, 17] == Provenance.SEED


def test_estimation_cancels_prior_scale(keyframe):
    kf = keyframe('tilted_plane')
    prior = DepthMap.from_array(np.where(kf.gt.valid, 0.5 * kf.gt.depth.depth, 0.0))
    field = normals_from_prior(prior, kf.cam, 'depth')
    cues = disambiguate(kf.meas, field, kf.scene.eta)
    seeds = sample_sparse_seeds(kf.gt, 0.05, seed=4)

    out = estimate_along_gradient(DensifyState.from_seeds(seeds), cues, field, DensifyConfig())
    estimated = out.provenance == Provenance.ESTIMATED
    assert estimated.sum() > seeds.count
    relative = np.abs(out.depth.depth[estimated] / kf.gt.depth.depth[estimated] - 1.0)
    assert np.percentile(relative, 95) <= 1e-3


def neighborhood_state(center_value):
    valid = np.ones((9, 9), dtype=bool)
    valid[4, 4] = False
    state = DensifyState.from_seeds(DepthMap(np.where(valid, 2.0, 0.0), valid, (1.0, 4.0)))
    return state.with_new(np.array([4 * 9 + 4]), np.array([center_value]), Provenance.PROPAGATED)


def test_median_validation_rejects_outliers():
    cfg = DensifyConfig(validation='mad')
    new_mask = np.zeros((9, 9), dtype=bool)
    new_mask[4, 4] = True

    out, rejected = validate(neighborhood_state(3.0), new_mask, cfg)
    assert rejected == 1
    assert not out.known[4, 4]
    assert out.provenance[4, 4] == Provenance.INVALID

    out, rejected = validate(neighborhood_state(2.01), new_mask, cfg)
    assert rejected == 0
    assert out.known[4, 4]


def test_validation_never_rejects_seeds():
    cfg = DensifyConfig(validation='mad')
    depth = np.full((9, 9), 2.0)
    depth[4, 4] = 3.5
    state = DensifyState.from_seeds(DepthMap(depth, np.ones((9, 9), dtype=bool), (1.0, 4.0)))
    out, rejected = validate(state, np.ones((9, 9), dtype=bool), cfg)
    assert rejected == 0
    assert out is state


def test_two_view_validation_uses_reference_where_covered():
    cfg = DensifyConfig(validation='two_view')
    new_mask = np.zeros((9, 9), dtype=bool)
    new_mask[4, 4] = True

    covering = single_seed((9, 9), 4, 4, value=2.0)
    _, rejected = validate(neighborhood_state(3.0), new_mask, cfg, reference=covering)
    assert rejected == 1

    # An uncovered pixel is kept even though its neighborhood disagrees
    elsewhere = single_seed((9, 9), 0, 0, value=2.0)
    out, rejected = validate(neighborhood_state(3.0), new_mask, cfg, reference=elsewhere)
    assert rejected == 0
    assert out.depth.depth[4, 4] == 3.0


def test_inliers_of_identical_views(flat_depth, small_camera):
    kept = extract_inliers(flat_depth, flat_depth, small_camera, small_camera, DensifyConfig())
    np.testing.assert_array_equal(kept.valid, flat_depth.valid)


def test_inliers_drop_one_perturbed_pixel(flat_depth, small_camera):
    cfg = DensifyConfig()
    threshold = cfg.consistency_frac * flat_depth.span
    depth = flat_depth.depth.copy()
    depth[10, 20] += 2 * threshold
    perturbed = DepthMap(depth, flat_depth.valid, flat_depth.z_range)

    kept = extract_inliers(perturbed, flat_depth, small_camera, small_camera, cfg)
    assert kept.count == flat_depth.count - 1
    assert not kept.valid[10, 20]


def test_inliers_filter_noisy_seeds(keyframe):
    first = keyframe('two_plane', index=0)
    second = keyframe('two_plane', index=1)
    noisy = sample_sparse_seeds(first.gt, 0.2, noise_rel=0.02, seed=9)

    kept = extract_inliers(noisy, second.gt.depth, first.cam, second.cam, DensifyConfig())
    assert 0 < kept.count < noisy.count
    assert absrel(kept, first.gt.depth) < absrel(noisy, first.gt.depth)


def test_tv_with_zero_lambda_is_identity():
    rng = np.random.default_rng(1)
    f = rng.uniform(1.0, 3.0, (12, 15))
    known = rng.random((12, 15)) > 0.2
    z, history = tv_descent(f, known, np.ones_like(f), 0.0, 10)
    np.testing.assert_allclose(z[known], f[known], atol=1e-12)
    assert len(history) == 11


def test_tv_keeps_constant_depth():
    f = np.full((10, 10), 2.5)
    known = np.ones((10, 10), dtype=bool)
    z, _ = tv_descent(f, known, np.ones_like(f), 0.3, 20)
    np.testing.assert_allclose(z, f)


@pytest.mark.parametrize("trial", range(20))
def test_tv_objective_never_increases(trial):
    rng = np.random.default_rng(100 + trial)
    f = rng.uniform(1.0, 4.0, (16, 20))
    known = rng.random((16, 20)) > 0.3
    tau = rng.uniform(0.2, 1.0, (16, 20))

    z, history = tv_descent(f, known, tau, 0.3, 50)
    assert len(history) == 51
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]
    assert tv_objective(z, f, known, tau, 0.3) == pytest.approx(history[-1])


def test_tv_denoises_a_step():
    rng = np.random.default_rng(5)
    clean = np.where(np.arange(40) < 20, 1.0, 2.0)[None, :].repeat(10, axis=0)
    noisy = clean * (1.0 + 0.01 * rng.standard_normal(clean.shape))
    known = np.ones(clean.shape, dtype=bool)
    tau = np.ones(clean.shape)

    z, history = tv_descent(noisy, known, tau, 0.05, 50)
    assert history[-1] < history[0]
    rmse_before = np.sqrt(np.mean((noisy - clean) ** 2))
    rmse_after = np.sqrt(np.mean((z - clean) ** 2))
    assert rmse_after < rmse_before


def test_edge_weights():
    flat = edge_weights(np.full((6, 6), 0.4), 3.0)
    np.testing.assert_allclose(flat, 1.0)

    image = np.where(np.arange(8) < 4, 0.0, 1.0)[None, :].repeat(6, axis=0)
    weights = edge_weights(image, 3.0)
    assert weights[3, 3] < weights[3, 0]
    assert weights.max() <= 1.0


def test_tv_smooth_stays_in_range_and_keeps_mask(keyframe):
    kf = keyframe('two_plane')
    state = DensifyState.from_seeds(kf.gt.depth)
    out = tv_smooth(state, kf.meas.intensity, DensifyConfig(tv_iters=10))
    np.testing.assert_array_equal(out.known, state.known)
    z_min, z_max = state.depth.z_range
    values = out.depth.depth[out.known]
    assert values.min() >= z_min and values.max() <= z_max
    limit = 3 * 0.3 * 1.0
    assert np.max(np.abs(values - state.depth.depth[state.known])) <= limit


def test_log_depth_smoothing_stays_positive(keyframe):
    kf = keyframe('two_plane')
    state = DensifyState.from_seeds(kf.gt.depth)
    out = tv_smooth(state, kf.meas.intensity, DensifyConfig(log_depth=True))
    assert (out.depth.depth[out.known] > 0).all()


def test_densify_with_full_seeds_converges_immediately(keyframe):
    kf = keyframe('two_plane', warp_kind='identity')
    depth, stats = densify_keyframe(kf.gt.depth, kf.cues, kf.field, kf.meas.intensity,
                                    DensifyConfig(), gt=kf.gt.depth)
    assert stats.converged
    assert len(stats.iterations) == 2
    assert stats.iterations[-1]['new'] == 0
    assert absrel(depth, kf.gt.depth) == 0.0


def test_densify_rejects_empty_seeds(keyframe):
    kf = keyframe('two_plane')
    empty = DepthMap.empty(kf.cam.shape, kf.gt.depth.z_range)
    with pytest.raises(EmptySeedsError):
        densify_keyframe(empty, kf.cues, kf.field, kf.meas.intensity, DensifyConfig())


def test_densify_single_plane(keyframe):
    kf = keyframe('single_plane', warp_kind='identity')
    depth, stats = densify_keyframe(kf.seeds, kf.cues, kf.field, kf.meas.intensity,
                                    DensifyConfig(), gt=kf.gt.depth)
    assert depth.count >= 50 * kf.seeds.count
    assert absrel(depth, kf.gt.depth) <= 0.01
    assert stats.iterations[0]['total'] == kf.seeds.count
    assert stats.trace[-1][1] == depth.count


def test_densify_room_with_noisy_seeds(keyframe):
    kf = keyframe('room', seed_noise=0.01)
    depth, stats = densify_keyframe(kf.seeds, kf.cues, kf.field, kf.meas.intensity,
                                    DensifyConfig(), gt=kf.gt.depth)
    assert depth.count > 10 * kf.seeds.count
    assert absrel(depth, kf.gt.depth) <= 0.08

    provenance = stats.provenance
    assert (provenance[kf.seeds.valid] == Provenance.SEED).all()
    assert ((provenance != Provenance.INVALID) == depth.valid).all()
    assert len(stats.iterations) <= DensifyConfig().max_outer_iters + 1


def test_densify_is_deterministic_across_threads(keyframe):
    kf = keyframe('box', seed_noise=0.01)
    args = (kf.seeds, kf.cues, kf.field, kf.meas.intensity, DensifyConfig())
    first, _ = densify_keyframe(*args, threads=1)
    second, _ = densify_keyframe(*args, threads=4)
    np.testing.assert_array_equal(first.depth, second.depth)
    np.testing.assert_array_equal(first.valid, second.valid)


@pytest.mark.slow
def test_densify_full_resolution_keyframe(keyframe):
    kf = keyframe('room', width=640, height=480, focal=600.0, seed_noise=0.01)
    depth, stats = densify_keyframe(kf.seeds, kf.cues, kf.field, kf.meas.intensity, DensifyConfig())
    assert depth.count > kf.seeds.count
    assert stats.iterations

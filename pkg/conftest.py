"""
Shared fixtures: small cameras and rendered synthetic keyframes.

Rendered keyframes are cached per argument set so that several test modules
can reuse the same scene without re-rendering it.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pytest

from core import CameraModel, DepthMap
from polarization import PolarCues, PolarFrame, PolarMeasurement, stokes_from_channels
from prior import PriorField, disambiguate, normals_from_prior
from synth import (
    GroundTruth,
    PriorWarp,
    SyntheticScene,
    preset_scene,
    render_scene,
    sample_sparse_seeds,
    simulate_relative_prior,
)


@dataclass(frozen=True)
class Keyframe:
    scene: SyntheticScene
    cam: CameraModel
    frame: PolarFrame
    gt: GroundTruth
    seeds: DepthMap
    prior: DepthMap
    field: PriorField
    meas: PolarMeasurement
    cues: PolarCues


@lru_cache(maxsize=None)
def build_keyframe(
    scene_name: str,
    width: int = 80,
    height: int = 60,
    focal: float = 75.0,
    index: int = 0,
    seed_fraction: float = 0.01,
    seed_noise: float = 0.0,
    channel_noise: float = 0.0,
    warp_kind: str = 'reciprocal',
    rng_seed: int = 0
) -> Keyframe:
    scene = preset_scene(scene_name)
    cam = scene.cameras(width, height, focal)[index]
    frame, gt = render_scene(scene, cam, channel_noise=channel_noise, seed=rng_seed)
    seeds = sample_sparse_seeds(gt, seed_fraction, seed_noise, seed=rng_seed + 1)
    warp = PriorWarp(kind=warp_kind)
    prior = simulate_relative_prior(gt, warp, seed=rng_seed + 2)
    field = normals_from_prior(prior, cam, warp.prior_space)
    meas = stokes_from_channels(frame)
    cues = disambiguate(meas, field, scene.eta)
    return Keyframe(scene, cam, frame, gt, seeds, prior, field, meas, cues)


@pytest.fixture
def keyframe():
    """Factory for cached rendered keyframes: keyframe('two_plane', seed_noise=0.01)."""
    return build_keyframe


@pytest.fixture
def small_camera():
    return CameraModel(
        f=100.0, cx=31.5, cy=23.5, width=64, height=48,
        rotation=np.eye(3), translation=np.zeros(3),
    )


@pytest.fixture
def flat_depth(small_camera):
    return DepthMap(np.full(small_camera.shape, 2.0), np.ones(small_camera.shape, dtype=bool), (1.0, 4.0))

"""
Synthetic polarization data module.

Ray casts analytic scenes (planes, spheres, oriented boxes) under a point light
with Blinn-Phong shading, turns the shaded radiance into four polarizer channels
through the diffuse/specular polarization models, and produces ground truth for
every downstream stage. Also simulates the sparse seed depths and the relative
depth prior that the reconstruction consumes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from core import (
    CameraModel,
    DepthMap,
    NormalMap,
    RejectedInputError,
    gradient,
    interior_of,
    map_chunks,
    pixel_grid,
    surface_gradient_normals,
    viewing_rays,
)
from polarization import (
    PolarFrame,
    Reflection,
    channels_from_stokes,
    dolp_diffuse,
    dolp_specular,
)


logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]
HIT_EPSILON = 1e-9


class SceneModel(BaseModel):
    model_config = ConfigDict(extra='forbid')


class Albedo(SceneModel):
    """Procedural albedo: constant, or a 3D checker with two tones."""
    kind: Literal['constant', 'checker'] = 'checker'
    value: float = Field(0.8, ge=0.0, le=1.0)
    value2: float = Field(0.35, ge=0.0, le=1.0)
    period: float = Field(0.25, gt=0.0)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.kind == 'constant':
            return np.full(points.shape[0], self.value)
        # Offset keeps axis-aligned surfaces off the cell boundaries
        cells = np.floor(points / self.period + 0.1234567).astype(np.int64).sum(axis=1)
        return np.where(cells % 2 == 0, self.value, self.value2)


class Material(SceneModel):
    k_a: float = Field(0.1, ge=0.0)
    k_d: float = Field(0.8, ge=0.0)
    k_s: float = Field(0.0, ge=0.0)
    shininess: float = Field(30.0, gt=0.0)


class Plane(SceneModel):
    """Plane through `center`; bounded to a rectangle when half_extents is set."""
    kind: Literal['plane'] = 'plane'
    center: Vec3
    normal: Vec3
    u_axis: Optional[Vec3] = None
    half_extents: Optional[Tuple[float, float]] = None
    albedo: Albedo = Albedo()
    material: Material = Material()

    @field_validator('normal')
    @classmethod
    def check_normal(cls, v):
        if np.linalg.norm(v) == 0:
            raise ValueError('plane normal must be non-zero')
        return v

    def frame(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        normal = np.asarray(self.normal, dtype=np.float64)
        normal = normal / np.linalg.norm(normal)
        if self.u_axis is not None:
            u = np.asarray(self.u_axis, dtype=np.float64)
        else:
            u = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = u - np.dot(u, normal) * normal
        u /= np.linalg.norm(u)
        return normal, u, np.cross(normal, u)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        normal, u, v = self.frame()
        center = np.asarray(self.center, dtype=np.float64)
        denom = dirs @ normal
        with np.errstate(divide='ignore', invalid='ignore'):
            t = np.where(np.abs(denom) > 1e-15, np.dot(center - origin, normal) / denom, np.inf)
        t = np.where(t > HIT_EPSILON, t, np.inf)

        if self.half_extents is not None:
            offset = origin + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs - center
            inside = (np.abs(offset @ u) <= self.half_extents[0]) & (np.abs(offset @ v) <= self.half_extents[1])
            t = np.where(inside, t, np.inf)
        return t, np.broadcast_to(normal, dirs.shape)


class Sphere(SceneModel):
    kind: Literal['sphere'] = 'sphere'
    center: Vec3
    radius: float = Field(gt=0.0)
    albedo: Albedo = Albedo()
    material: Material = Material()

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center, dtype=np.float64)
        oc = origin - center
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * (dirs @ oc)
        c = np.dot(oc, oc) - self.radius ** 2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        near = (-b - root) / (2 * a)
        far = (-b + root) / (2 * a)
        t = np.where(near > HIT_EPSILON, near, far)
        t = np.where((disc >= 0) & (t > HIT_EPSILON), t, np.inf)
        points = origin + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
        return t, (points - center) / self.radius


class Box(SceneModel):
    """Oriented box; `quaternion_xyzw` rotates box axes into the world."""
    kind: Literal['box'] = 'box'
    center: Vec3
    half_sizes: Vec3
    quaternion_xyzw: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    albedo: Albedo = Albedo()
    material: Material = Material()

    @field_validator('half_sizes')
    @classmethod
    def check_sizes(cls, v):
        if min(v) <= 0:
            raise ValueError('box half sizes must be positive')
        return v

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rotation = Rotation.from_quat(self.quaternion_xyzw).as_matrix()
        half = np.asarray(self.half_sizes, dtype=np.float64)
        local_origin = rotation.T @ (origin - np.asarray(self.center, dtype=np.float64))
        local_dirs = dirs @ rotation

        with np.errstate(divide='ignore', invalid='ignore'):
            t1 = (-half - local_origin) / local_dirs
            t2 = (half - local_origin) / local_dirs
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        t_near = np.minimum(t1, t2)
        t_far = np.maximum(t1, t2)

        axis = np.argmax(t_near, axis=1)
        t_enter = t_near.max(axis=1)
        t_exit = t_far.min(axis=1)
        t = np.where((t_enter <= t_exit) & (t_enter > HIT_EPSILON), t_enter, np.inf)

        rows = np.arange(dirs.shape[0])
        normals_local = np.zeros_like(dirs)
        normals_local[rows, axis] = -np.sign(local_dirs[rows, axis])
        return t, normals_local @ rotation.T


Surface = Annotated[Union[Plane, Sphere, Box], Field(discriminator='kind')]


class Light(SceneModel):
    position: Vec3
    radiance: float = Field(1.0, gt=0.0)


class Viewpoint(SceneModel):
    eye: Vec3
    target: Vec3
    up: Vec3 = (0.0, -1.0, 0.0)


class SyntheticScene(SceneModel):
    surfaces: List[Surface] = Field(min_length=1)
    light: Light
    eta: float = Field(1.5, ge=1.3, le=1.8)
    z_range: Tuple[float, float]
    background_depth: Optional[float] = None
    background_albedo: float = Field(0.5, ge=0.0, le=1.0)
    keyframes: List[Viewpoint] = Field(min_length=1)

    @model_validator(mode='after')
    def check_range(self):
        z_min, z_max = self.z_range
        if not (0 < z_min < z_max):
            raise ValueError(f'z_range must satisfy 0 < z_min < z_max, got {self.z_range}')
        if self.background_depth is not None and not (z_min <= self.background_depth <= z_max):
            raise ValueError('background_depth must lie inside z_range')
        return self

    def cameras(self, width: int, height: int, focal: float) -> List[CameraModel]:
        return [
            CameraModel.looking_at(focal, width, height, vp.eye, vp.target, vp.up)
            for vp in self.keyframes
        ]


@dataclass(frozen=True)
class GroundTruth:
    """
    Per-pixel ground truth of a rendered keyframe.

    Normals use the surface-gradient orientation (pointing away from the
    camera). `surface_id` is -1 where nothing was hit.
    """
    depth: DepthMap
    normals: NormalMap
    aolp: np.ndarray
    dolp: np.ndarray
    reflection: np.ndarray
    azimuth_true: np.ndarray
    zenith_true: np.ndarray
    intensity: np.ndarray
    surface_id: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.depth.valid


def _trace_rows(scene: SyntheticScene, cam: CameraModel, start: int, stop: int) -> Dict[str, np.ndarray]:
    """Cast the rays of image rows [start, stop) against every surface."""
    xs, ys = pixel_grid(cam.height, cam.width)
    xs, ys = xs[start:stop].ravel(), ys[start:stop].ravel()
    dirs_cam = np.stack([(xs - cam.cx) / cam.f, (ys - cam.cy) / cam.f, np.ones_like(xs)], axis=1)
    dirs = dirs_cam @ cam.rotation
    origin = cam.center

    surfaces = list(scene.surfaces)
    if scene.background_depth is not None:
        surfaces.append(Plane(
            center=tuple(cam.to_world(np.array([[0.0, 0.0, scene.background_depth]]))[0]),
            normal=tuple(cam.rotation[2]),
            albedo=Albedo(kind='constant', value=scene.background_albedo),
        ))

    hits = [surface.intersect(origin, dirs) for surface in surfaces]
    ts = np.stack([h[0] for h in hits])
    surface_id = np.argmin(ts, axis=0)
    t = ts[surface_id, np.arange(ts.shape[1])]
    hit = np.isfinite(t)
    surface_id = np.where(hit, surface_id, -1)

    normals = np.zeros_like(dirs)
    albedo = np.zeros(dirs.shape[0])
    material = np.zeros((dirs.shape[0], 4))
    points = origin + np.where(hit, t, 0.0)[:, None] * dirs
    for index, surface in enumerate(surfaces):
        picked = surface_id == index
        if not picked.any():
            continue
        normals[picked] = hits[index][1][picked]
        albedo[picked] = surface.albedo.evaluate(points[picked])
        m = surface.material
        material[picked] = (m.k_a, m.k_d, m.k_s, m.shininess)

    # Two-sided surfaces: orient every normal toward the camera
    facing = np.sum(normals * dirs, axis=1) > 0
    normals[facing] *= -1

    return {
        'depth': np.where(hit, t, 0.0),
        'surface_id': surface_id,
        'normals': normals,
        'points': points,
        'albedo': albedo,
        'material': material,
    }


def _shade_and_polarize(
    points_cam: np.ndarray,
    facing_cam: np.ndarray,
    albedo: np.ndarray,
    material: np.ndarray,
    light_cam: np.ndarray,
    radiance: float,
    eta: float,
    cam: CameraModel,
    valid: np.ndarray
) -> Dict[str, np.ndarray]:
    """
    Blinn-Phong shading plus polarization state for camera-frame geometry.

    All per-pixel inputs are (H, W, ...) arrays; `facing_cam` holds unit normals
    oriented toward the camera.
    """
    k_a, k_d, k_s, shininess = np.moveaxis(material, -1, 0)

    to_light = light_cam - points_cam
    to_light /= np.maximum(np.linalg.norm(to_light, axis=-1, keepdims=True), 1e-12)
    to_view = -points_cam
    to_view /= np.maximum(np.linalg.norm(to_view, axis=-1, keepdims=True), 1e-12)
    half = to_light + to_view
    half /= np.maximum(np.linalg.norm(half, axis=-1, keepdims=True), 1e-12)

    n_dot_l = np.sum(facing_cam * to_light, axis=-1)
    n_dot_h = np.maximum(np.sum(facing_cam * half, axis=-1), 0.0)
    diffuse_term = k_d * albedo * np.maximum(n_dot_l, 0.0)
    specular_term = np.where(n_dot_l > 0, k_s * n_dot_h ** shininess, 0.0)
    intensity = np.where(valid, k_a * albedo + radiance * (diffuse_term + specular_term), 0.0)

    reflection = np.where(specular_term > diffuse_term, Reflection.SPECULAR, Reflection.DIFFUSE).astype(np.int8)

    # Stored normals point away from the camera, matching the surface-gradient form
    normals = -facing_cam
    valid = valid & (normals[..., 2] >= 0)
    normals = np.where(valid[..., None], normals, 0.0)

    azimuth = np.mod(np.arctan2(normals[..., 1], normals[..., 0]), 2 * np.pi)
    azimuth[azimuth >= 2 * np.pi] = 0.0
    cos_zenith = np.abs(np.sum(normals * viewing_rays(cam), axis=-1))
    zenith = np.arccos(np.clip(cos_zenith, 0.0, 1.0))

    specular = reflection == Reflection.SPECULAR
    dolp = np.where(specular, dolp_specular(zenith, eta), dolp_diffuse(zenith, eta))
    aolp = np.mod(np.where(specular, azimuth + np.pi / 2, azimuth), np.pi)
    aolp[aolp >= np.pi] = 0.0

    return {
        'intensity': intensity,
        'reflection': reflection,
        'normals': normals,
        'azimuth': np.where(valid, azimuth, 0.0),
        'zenith': np.where(valid, zenith, 0.0),
        'dolp': np.where(valid, dolp, 0.0),
        'aolp': np.where(valid, aolp, 0.0),
        'valid': valid,
    }


def _assemble(
    shaded: Dict[str, np.ndarray],
    depth: np.ndarray,
    surface_id: np.ndarray,
    z_range: Tuple[float, float],
    channel_noise: float,
    seed: int
) -> Tuple[PolarFrame, GroundTruth]:
    valid = shaded['valid']
    channels = channels_from_stokes(shaded['intensity'], shaded['dolp'], shaded['aolp'])
    if channel_noise > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, 1.0, size=channels.shape)
        channels = np.clip(channels + channel_noise * 0.5 * shaded['intensity'] * noise, 0.0, None)

    gt = GroundTruth(
        depth=DepthMap(np.where(valid, depth, 0.0), valid, z_range),
        normals=NormalMap(shaded['normals'], valid),
        aolp=shaded['aolp'],
        dolp=shaded['dolp'],
        reflection=np.where(valid, shaded['reflection'], Reflection.DIFFUSE).astype(np.int8),
        azimuth_true=shaded['azimuth'],
        zenith_true=shaded['zenith'],
        intensity=shaded['intensity'],
        surface_id=np.where(valid, surface_id, -1),
    )
    return PolarFrame(channels), gt


def render_scene(
    scene: SyntheticScene,
    cam: CameraModel,
    channel_noise: float = 0.0,
    seed: int = 0,
    eta: Optional[float] = None,
    threads: int = 1
) -> Tuple[PolarFrame, GroundTruth]:
    """
    Render one keyframe of a synthetic scene.

    Args:
        scene: Scene description
        cam: Keyframe camera
        channel_noise: Gaussian channel noise, relative to each pixel's radiance
        seed: RNG seed for channel noise
        eta: Refractive index override (defaults to the scene's)
        threads: Worker threads for ray casting (0 = one per CPU)

    Returns:
        (PolarFrame, GroundTruth)

    Raises:
        RejectedInputError: If no camera ray hits the scene
    """
    eta = scene.eta if eta is None else eta
    chunks = map_chunks(lambda a, b: _trace_rows(scene, cam, a, b), cam.height, threads)
    traced = {key: np.concatenate([c[key] for c in chunks]) for key in chunks[0]}

    shape = cam.shape
    depth = traced['depth'].reshape(shape)
    surface_id = traced['surface_id'].reshape(shape)
    hit = surface_id >= 0
    if not hit.any():
        raise RejectedInputError("Camera sees no surface of the scene")

    z_min, z_max = scene.z_range
    outside = hit & ((depth < z_min) | (depth > z_max))
    if outside.any():
        logger.warning(f"{int(outside.sum())} hits fall outside the scene depth range and are dropped")
        hit &= ~outside

    points_cam = cam.from_world(traced['points']).reshape(shape + (3,))
    facing_cam = (traced['normals'] @ cam.rotation.T).reshape(shape + (3,))
    light_cam = cam.from_world(np.asarray(scene.light.position, dtype=np.float64)[None, :])[0]

    shaded = _shade_and_polarize(
        points_cam,
        facing_cam,
        traced['albedo'].reshape(shape),
        traced['material'].reshape(shape + (4,)),
        light_cam,
        scene.light.radiance,
        eta,
        cam,
        hit,
    )
    frame, gt = _assemble(shaded, depth, surface_id, scene.z_range, channel_noise, seed)
    logger.info(
        f"Rendered {cam.width}x{cam.height} keyframe: {gt.depth.count} surface pixels, "
        f"{int((gt.reflection == Reflection.SPECULAR)[gt.valid].sum())} specular"
    )
    return frame, gt


def render_depth_image(
    depth: DepthMap,
    texture: np.ndarray,
    cam: CameraModel,
    eta: float = 1.5,
    light_position: Vec3 = (0.5, -1.0, 0.0),
    radiance: float = 1.0,
    material: Optional[Material] = None,
    channel_noise: float = 0.0,
    seed: int = 0
) -> Tuple[PolarFrame, GroundTruth]:
    """
    Synthesize polarization channels from an existing depth image.

    Normals come from the depth gradient, the texture (values in [0, 1]) is used
    as albedo and the light position is given in the camera frame.
    """
    if depth.shape != cam.shape or texture.shape != cam.shape:
        raise RejectedInputError("Depth image, texture and camera must share dimensions")
    material = material or Material()

    grad_x, grad_y = gradient(depth.depth)
    n_prime, norm = surface_gradient_normals(depth.depth, grad_x, grad_y, cam)
    valid = interior_of(depth.valid) & (norm > 1e-12)
    with np.errstate(divide='ignore', invalid='ignore'):
        normals = np.where(valid[..., None], n_prime / norm[..., None], 0.0)

    xs, ys = pixel_grid(cam.height, cam.width)
    points_cam = np.stack([(xs - cam.cx) * depth.depth / cam.f, (ys - cam.cy) * depth.depth / cam.f, depth.depth], axis=-1)
    materials = np.broadcast_to(
        np.array([material.k_a, material.k_d, material.k_s, material.shininess]), cam.shape + (4,)
    )

    shaded = _shade_and_polarize(
        points_cam,
        -normals,
        np.clip(texture, 0.0, 1.0),
        materials,
        np.asarray(light_position, dtype=np.float64),
        radiance,
        eta,
        cam,
        valid,
    )
    surface_id = np.zeros(cam.shape, dtype=np.int64)
    return _assemble(shaded, depth.depth, surface_id, depth.z_range, channel_noise, seed)


def sample_sparse_seeds(
    gt: GroundTruth,
    fraction: float,
    noise_rel: float = 0.0,
    seed: int = 0
) -> DepthMap:
    """
    Draw sparse seed depths from ground truth.

    Picks ceil(fraction * M) of the M valid pixels without replacement, with
    probability growing with the local intensity gradient, and perturbs each
    depth by a factor (1 + eps), eps ~ N(0, noise_rel).

    Raises:
        RejectedInputError: If fraction is outside (0, 1]
    """
    if not (0 < fraction <= 1):
        raise RejectedInputError(f"Seed fraction must be in (0, 1], got {fraction}")
    if noise_rel < 0:
        raise RejectedInputError(f"Seed noise must be non-negative, got {noise_rel}")

    rng = np.random.default_rng(seed)
    flat_valid = np.flatnonzero(gt.depth.valid)
    count = min(flat_valid.size, int(math.ceil(fraction * flat_valid.size)))

    grad_x, grad_y = gradient(gt.intensity)
    strength = np.hypot(grad_x, grad_y).ravel()[flat_valid]
    weights = strength + 0.1 * strength.mean() + 1e-12
    picked = np.sort(rng.choice(flat_valid, size=count, replace=False, p=weights / weights.sum()))

    values = gt.depth.depth.ravel()[picked]
    if noise_rel > 0:
        values = values * (1.0 + rng.normal(0.0, noise_rel, size=count))
    z_min, z_max = gt.depth.z_range
    values = np.clip(values, z_min, z_max)

    depth = np.zeros(gt.depth.shape)
    valid = np.zeros(gt.depth.shape, dtype=bool)
    depth.ravel()[picked] = values
    valid.ravel()[picked] = True
    logger.info(f"Sampled {count} seeds ({fraction:.2%} of {flat_valid.size}), noise {noise_rel:.2%}")
    return DepthMap(depth, valid, gt.depth.z_range)


class PriorWarp(SceneModel):
    """
    Monotone map applied to ground-truth depth:
    identity z, scale a*z, or reciprocal a / (z + b).
    """
    kind: Literal['identity', 'scale', 'reciprocal'] = 'reciprocal'
    a: float = 1.0
    b: float = 0.0

    def apply(self, depth: np.ndarray) -> np.ndarray:
        if self.kind == 'identity':
            return depth.copy()
        if self.kind == 'scale':
            return self.a * depth
        return self.a / (depth + self.b)

    @property
    def prior_space(self) -> str:
        return 'disparity' if self.kind == 'reciprocal' else 'depth'


def simulate_relative_prior(
    gt: GroundTruth,
    warp: Optional[PriorWarp] = None,
    surface_bias: Optional[Dict[int, float]] = None,
    seed: int = 0,
    bias_sigma: float = 0.0
) -> DepthMap:
    """
    Build a relative depth prior from ground truth.

    Args:
        gt: Ground truth of the keyframe
        warp: Monotone depth warp (reciprocal a / (z + b) by default)
        surface_bias: Constant offset added per surface id after warping
        seed: RNG seed for random per-surface offsets
        bias_sigma: Std of random per-surface offsets (0 disables)

    Returns:
        DepthMap of the warped prior, valid where gt is valid

    Raises:
        RejectedInputError: If the warp is not strictly monotone on the depth
            range or the result is not positive
    """
    warp = warp or PriorWarp()
    z_min, _ = gt.depth.z_range
    if warp.kind != 'identity' and warp.a <= 0:
        raise RejectedInputError(f"Prior warp scale a must be positive, got {warp.a}")
    if warp.kind == 'reciprocal' and warp.b <= -z_min:
        raise RejectedInputError(f"Prior warp offset b={warp.b} makes the reciprocal map singular on the depth range")

    valid = gt.depth.valid
    values = np.zeros(gt.depth.shape)
    values[valid] = warp.apply(gt.depth.depth[valid])

    offsets = dict(surface_bias or {})
    if bias_sigma > 0:
        rng = np.random.default_rng(seed)
        for surface in np.unique(gt.surface_id[valid]):
            offsets[int(surface)] = offsets.get(int(surface), 0.0) + float(rng.normal(0.0, bias_sigma))
    for surface, offset in offsets.items():
        values[valid & (gt.surface_id == surface)] += offset

    if np.any(values[valid] <= 0):
        raise RejectedInputError("Simulated prior has non-positive values; reduce the surface bias")
    return DepthMap.from_array(np.where(valid, values, 0.0))


def _tilted_normal(yaw_deg: float, pitch_deg: float = 0.0) -> Vec3:
    """Camera-facing plane normal tilted by yaw about y, then pitch about x."""
    normal = Rotation.from_euler('yx', [yaw_deg, pitch_deg], degrees=True).apply([0.0, 0.0, -1.0])
    return tuple(float(v) for v in normal)


def _pan(count: int, step: float, target: Vec3, start: Vec3 = (0.0, 0.0, 0.0)) -> List[Viewpoint]:
    return [
        Viewpoint(eye=(start[0] + k * step, start[1], start[2]), target=(target[0] + k * step, target[1], target[2]))
        for k in range(count)
    ]


def _preset_single_plane() -> SyntheticScene:
    return SyntheticScene(
        surfaces=[Plane(center=(0.0, 0.0, 2.5), normal=_tilted_normal(50.0, 15.0))],
        light=Light(position=(0.5, -1.0, 0.0)),
        z_range=(1.5, 8.0),
        keyframes=_pan(3, 0.05, (0.0, 0.0, 2.5)),
    )


def _preset_tilted_plane() -> SyntheticScene:
    return SyntheticScene(
        surfaces=[Plane(center=(0.0, 0.0, 3.0), normal=_tilted_normal(45.0))],
        light=Light(position=(0.5, -1.0, 0.0)),
        z_range=(1.5, 8.0),
        keyframes=_pan(3, 0.05, (0.0, 0.0, 3.0)),
    )


def _preset_fronto_plane() -> SyntheticScene:
    return SyntheticScene(
        surfaces=[Plane(center=(0.0, 0.0, 3.0), normal=(0.0, 0.0, -1.0))],
        light=Light(position=(0.5, -1.0, 0.0)),
        z_range=(1.0, 6.0),
        keyframes=_pan(2, 0.05, (0.0, 0.0, 3.0)),
    )


def _preset_two_plane() -> SyntheticScene:
    # A bounded plane in front of a second plane tilted the other way: depth
    # gap and azimuth jump at the near plane's edge
    yaw = np.radians(45.0)
    return SyntheticScene(
        surfaces=[
            Plane(
                center=(-0.5, 0.0, 2.5),
                normal=_tilted_normal(45.0),
                u_axis=(float(np.cos(yaw)), 0.0, -float(np.sin(yaw))),
                half_extents=(0.6, 3.0),
            ),
            Plane(center=(0.0, 0.0, 4.0), normal=_tilted_normal(0.0, 45.0)),
        ],
        light=Light(position=(0.5, -1.0, 0.0)),
        z_range=(1.5, 8.0),
        keyframes=_pan(3, 0.04, (0.0, 0.0, 3.0)),
    )


def _preset_two_wall() -> SyntheticScene:
    # Concave vertical corner at (0.3, *, 4) with walls 60 degrees off fronto
    corner = (0.3, 0.0, 4.0)
    return SyntheticScene(
        surfaces=[
            Plane(center=corner, normal=(0.866, 0.0, -0.5)),
            Plane(center=corner, normal=(-0.866, 0.0, -0.5)),
        ],
        light=Light(position=(0.3, -1.5, 1.0)),
        z_range=(1.0, 6.0),
        keyframes=_pan(3, 0.04, corner),
    )


def _preset_sphere() -> SyntheticScene:
    return SyntheticScene(
        surfaces=[Sphere(
            center=(0.0, 0.0, 3.0),
            radius=0.9,
            albedo=Albedo(period=0.15),
            material=Material(k_d=0.7, k_s=0.6, shininess=40.0),
        )],
        light=Light(position=(1.0, -1.0, 0.5)),
        z_range=(1.5, 4.5),
        keyframes=_pan(3, 0.04, (0.0, 0.0, 3.0)),
    )


def _preset_box() -> SyntheticScene:
    return SyntheticScene(
        surfaces=[Box(
            center=(0.0, 0.0, 3.5),
            half_sizes=(0.6, 0.6, 0.6),
            quaternion_xyzw=tuple(Rotation.from_euler('yx', [35.0, -25.0], degrees=True).as_quat()),
            albedo=Albedo(period=0.2),
        )],
        light=Light(position=(1.0, -1.5, 0.5)),
        z_range=(2.0, 5.0),
        keyframes=_pan(3, 0.04, (0.0, 0.0, 3.5)),
    )


def _preset_room() -> SyntheticScene:
    walls = [
        Plane(center=(-2.0, 0.0, 0.0), normal=(1.0, 0.0, 0.0)),
        Plane(center=(2.0, 0.0, 0.0), normal=(-1.0, 0.0, 0.0)),
        Plane(center=(0.0, 0.0, 5.0), normal=(0.0, 0.0, -1.0)),
        Plane(center=(0.0, 1.2, 0.0), normal=(0.0, -1.0, 0.0), albedo=Albedo(period=0.4)),
        Plane(center=(0.0, -1.5, 0.0), normal=(0.0, 1.0, 0.0), albedo=Albedo(kind='constant', value=0.7)),
        Plane(center=(0.0, 0.0, -1.0), normal=(0.0, 0.0, 1.0)),
    ]
    furniture = [
        Box(
            center=(1.0, 0.8, 2.8),
            half_sizes=(0.4, 0.4, 0.4),
            quaternion_xyzw=tuple(Rotation.from_euler('y', 30.0, degrees=True).as_quat()),
            albedo=Albedo(period=0.15),
        ),
        Sphere(center=(0.0, 0.6, 3.4), radius=0.5, albedo=Albedo(period=0.12)),
    ]
    keyframes = [
        Viewpoint(eye=(-0.5 + 0.04 * k, 0.0, 0.03 * k), target=(2.5, 0.9, 3.0 + 0.05 * k))
        for k in range(3)
    ]
    return SyntheticScene(
        surfaces=walls + furniture,
        light=Light(position=(0.0, -1.2, 1.5)),
        z_range=(0.5, 8.0),
        keyframes=keyframes,
    )


PRESETS = {
    'single_plane': _preset_single_plane,
    'tilted_plane': _preset_tilted_plane,
    'fronto_plane': _preset_fronto_plane,
    'two_plane': _preset_two_plane,
    'two_wall': _preset_two_wall,
    'sphere': _preset_sphere,
    'box': _preset_box,
    'room': _preset_room,
}


def preset_scene(name: str) -> SyntheticScene:
    if name not in PRESETS:
        raise RejectedInputError(f"Unknown scene preset '{name}', available: {sorted(PRESETS)}")
    return PRESETS[name]()

"""
Relative-depth prior module.

Derives surface normals and a zenith estimate from a scale-free depth prior,
then uses the prior's gradient direction to pick one of the four polarimetric
azimuth candidates per pixel, which also labels the pixel diffuse or specular.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core import (
    CameraModel,
    DepthMap,
    NormalMap,
    RejectedInputError,
    gradient,
    interior_of,
    surface_gradient_normals,
    viewing_rays,
)
from polarization import (
    CANDIDATE_MODELS,
    PolarCues,
    PolarMeasurement,
    Reflection,
    azimuth_candidates,
    zenith_diffuse,
    zenith_specular,
)


logger = logging.getLogger(__name__)

PRIOR_SPACES = ('depth', 'disparity')
MAX_ALIGNMENT_ERROR = np.pi / 4
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PriorField:
    """
    Normals and zenith derived from a relative depth prior.

    Attributes:
        zprime: prior in depth space (reciprocal of the input for disparity priors)
        grad_x, grad_y: per-pixel prior gradient
        normals: unit normals, surface-gradient orientation (n_z >= 0)
        zenith_prior: angle between normal and viewing ray, radians
        valid: pixels with a usable normal
        gmin: gradient magnitude below which the direction is not trusted
    """
    zprime: DepthMap
    grad_x: np.ndarray
    grad_y: np.ndarray
    normals: NormalMap
    zenith_prior: np.ndarray
    valid: np.ndarray
    gmin: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.zprime.shape

    @property
    def gradient_magnitude(self) -> np.ndarray:
        return np.hypot(self.grad_x, self.grad_y)


def to_depth_space(zprime: DepthMap, prior_space: str) -> DepthMap:
    """Convert a disparity-space prior to depth space (reciprocal)."""
    if prior_space not in PRIOR_SPACES:
        raise RejectedInputError(f"Unknown prior space '{prior_space}', expected one of {PRIOR_SPACES}")
    if prior_space == 'depth':
        return zprime

    values = np.zeros(zprime.shape)
    values[zprime.valid] = 1.0 / zprime.depth[zprime.valid]
    return DepthMap(values, zprime.valid, (1.0 / zprime.z_range[1], 1.0 / zprime.z_range[0]))


def discontinuity_mask(values: np.ndarray, valid: np.ndarray, abs_floor: float) -> np.ndarray:
    """
    Pixels whose forward and backward differences disagree by more than half
    their combined magnitude and by more than abs_floor, along x or y.
    """
    suspect = np.zeros(values.shape, dtype=bool)
    for axis in (0, 1):
        forward = np.diff(values, axis=axis)
        pair_ok = np.logical_and(
            np.take(valid, range(values.shape[axis] - 1), axis=axis),
            np.take(valid, range(1, values.shape[axis]), axis=axis),
        )
        forward = np.where(pair_ok, forward, 0.0)
        # Differences around every interior pixel along this axis
        back = np.take(forward, range(forward.shape[axis] - 1), axis=axis)
        ahead = np.take(forward, range(1, forward.shape[axis]), axis=axis)
        jump = np.abs(ahead - back)
        flagged = (jump > 0.5 * (np.abs(ahead) + np.abs(back))) & (jump > abs_floor)
        if axis == 0:
            suspect[1:-1, :] |= flagged
        else:
            suspect[:, 1:-1] |= flagged
    return suspect


def normals_from_prior(
    zprime: DepthMap,
    cam: CameraModel,
    prior_space: str = 'depth',
    gmin_frac: float = 1e-4,
    guard_discontinuities: bool = True
) -> PriorField:
    """
    Compute normals and zenith from the prior via its surface gradient.

    Args:
        zprime: Relative depth prior (arbitrary scale)
        cam: Camera of the keyframe
        prior_space: 'depth' or 'disparity' (reciprocal taken first)
        gmin_frac: Minimum trusted gradient magnitude as a fraction of the prior range
        guard_discontinuities: Mask pixels straddling prior jumps

    Returns:
        PriorField
    """
    if zprime.shape != cam.shape:
        raise RejectedInputError(f"Prior {zprime.shape} does not match camera {cam.shape}")

    zprime = to_depth_space(zprime, prior_space)
    values = zprime.depth
    valid = interior_of(zprime.valid)
    grad_x, grad_y = gradient(values)

    if zprime.valid.any():
        picked = values[zprime.valid]
        value_range = float(picked.max() - picked.min())
    else:
        value_range = 0.0

    if guard_discontinuities:
        jumps = discontinuity_mask(values, zprime.valid, 1e-3 * value_range)
        logger.debug(f"Discontinuity guard masked {int((jumps & valid).sum())} prior pixels")
        valid &= ~jumps

    n_prime, norm = surface_gradient_normals(values, grad_x, grad_y, cam)
    valid &= norm >= 1e-12
    with np.errstate(divide='ignore', invalid='ignore'):
        normals = np.where(valid[..., None], n_prime / norm[..., None], 0.0)
    valid &= normals[..., 2] >= 0

    cos_zenith = np.abs(np.sum(normals * viewing_rays(cam), axis=-1))
    zenith_prior = np.where(valid, np.arccos(np.clip(cos_zenith, 0.0, 1.0)), 0.0)

    grad_x = np.where(valid, grad_x, 0.0)
    grad_y = np.where(valid, grad_y, 0.0)

    logger.info(f"Prior normals: {valid.sum()} valid pixels, value range {value_range:.4g}")
    return PriorField(
        zprime=zprime,
        grad_x=grad_x,
        grad_y=grad_y,
        normals=NormalMap(normals, valid),
        zenith_prior=zenith_prior,
        valid=valid,
        gmin=gmin_frac * value_range,
    )


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - angle, 2 * np.pi)


def prior_direction(field: PriorField) -> np.ndarray:
    """Image-plane direction of the prior normal, i.e. of (-grad_x, -grad_y)."""
    return np.mod(np.arctan2(-field.grad_y, -field.grad_x), 2 * np.pi)


def tangent_residual(azimuth: np.ndarray, grad_x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    """
    Squared tangent-ratio alignment error (grad_y / grad_x - tan(azimuth))^2.

    Blind to the pi ambiguity and undefined where grad_x == 0 (NaN there).
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(grad_x != 0, grad_y / grad_x, np.nan)
    return (ratio - np.tan(azimuth)) ** 2


def disambiguate(
    meas: PolarMeasurement,
    field: PriorField,
    eta: float = 1.5
) -> PolarCues:
    """
    Resolve the azimuth ambiguity of every pixel against the prior.

    Each of the four candidates is scored by its angular distance to the prior
    normal direction; the closest wins, ties going to the diffuse pair. The
    winner decides the reflection label, which selects the zenith inversion.
    Specular pixels take the root closer to the prior zenith.

    Args:
        meas: Polarization measurement
        field: Prior field of the same keyframe
        eta: Refractive index

    Returns:
        PolarCues; pixels with an untrusted prior gradient, an invalid
        measurement, or an alignment error above pi/4 are invalid
    """
    if meas.shape != field.shape:
        raise RejectedInputError(f"Measurement {meas.shape} and prior {field.shape} differ in size")

    candidates = azimuth_candidates(meas.aolp)
    direction = prior_direction(field)
    scores = np.abs(wrap_angle(candidates - direction[..., None]))

    best_score = scores.min(axis=-1)
    # First candidate within tolerance of the best; diffuse candidates come first
    best = np.argmax(scores <= best_score[..., None] + TIE_TOLERANCE, axis=-1)
    azimuth = np.take_along_axis(candidates, best[..., None], axis=-1)[..., 0]
    reflection = np.asarray(CANDIDATE_MODELS, dtype=np.int8)[best]

    magnitude = field.gradient_magnitude
    trusted = (magnitude >= field.gmin) & (magnitude > 0)
    aligned = best_score <= MAX_ALIGNMENT_ERROR
    valid = meas.valid & field.valid & trusted & aligned

    specular = reflection == Reflection.SPECULAR
    zenith_d, clamped_d = zenith_diffuse(meas.dolp, eta)
    roots = zenith_specular(meas.dolp, eta)
    pick_lo = np.abs(roots.lo - field.zenith_prior) <= np.abs(roots.hi - field.zenith_prior)
    zenith_s = np.where(pick_lo, roots.lo, roots.hi)
    zenith = np.where(specular, zenith_s, zenith_d)

    clamped = np.where(specular, roots.clamped, clamped_d) & valid
    if clamped.any():
        logger.warning(f"{int(clamped.sum())} pixels exceed the DoLP curve maximum; zenith clamped")

    logger.info(
        f"Disambiguation: {valid.sum()} valid cues "
        f"({int((specular & valid).sum())} specular), "
        f"{int((meas.valid & field.valid & trusted & ~aligned).sum())} rejected for misalignment"
    )
    return PolarCues(azimuth=azimuth, zenith=zenith, reflection=reflection, valid=valid)

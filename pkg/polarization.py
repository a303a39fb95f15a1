"""
Polarization module: recover DoLP/AoLP from four polarizer channels and turn
them into candidate azimuths and zenith angles under the diffuse and specular
reflection models.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from core import NumericalFailure, RejectedInputError


logger = logging.getLogger(__name__)

# Polarizer filter angles of the four channels, radians
CHANNEL_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
CHANNEL_SUFFIXES = ('p000', 'p045', 'p090', 'p135')

ETA_RANGE = (1.3, 1.8)
BISECTION_STEPS = 64


class Reflection(IntEnum):
    DIFFUSE = 0
    SPECULAR = 1


# Reflection model behind each of the four azimuth candidates
CANDIDATE_MODELS = (Reflection.DIFFUSE, Reflection.DIFFUSE, Reflection.SPECULAR, Reflection.SPECULAR)


@dataclass(frozen=True)
class PolarFrame:
    """
    Four co-registered channel images, one per polarizer angle.

    Attributes:
        channels: (4, H, W) linear radiance at 0, 45, 90 and 135 degrees
    """
    channels: np.ndarray

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.ndim != 3 or channels.shape[0] != 4:
            raise RejectedInputError(f"Expected four channel images stacked as (4, H, W), got {channels.shape}")
        if channels.shape[1] < 2 or channels.shape[2] < 2:
            raise RejectedInputError(f"Channel images must be at least 2x2, got {channels.shape[1:]}")
        if not np.all(np.isfinite(channels)):
            raise RejectedInputError("Channel radiance must be finite")
        if channels.min() < 0:
            raise RejectedInputError(f"Negative channel radiance {channels.min():.6g}")
        object.__setattr__(self, 'channels', channels)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.channels.shape[1:]

    def mean_intensity(self) -> np.ndarray:
        """Mean of the four channels (the grayscale keyframe image)."""
        return self.channels.mean(axis=0)


@dataclass(frozen=True)
class PolarMeasurement:
    dolp: np.ndarray
    aolp: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.dolp.shape


@dataclass(frozen=True)
class PolarCues:
    """
    Disambiguated per-pixel normal cues.

    Attributes:
        azimuth: (H, W) radians in [0, 2pi)
        zenith: (H, W) radians in [0, pi/2]
        reflection: (H, W) int8 Reflection labels
        valid: (H, W) mask
    """
    azimuth: np.ndarray
    zenith: np.ndarray
    reflection: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid, dtype=bool)
        azimuth = np.where(valid, self.azimuth, 0.0)
        zenith = np.where(valid, self.zenith, 0.0)
        if valid.any():
            if not (np.all(np.isfinite(azimuth)) and np.all(np.isfinite(zenith))):
                raise RejectedInputError("Valid cues must be finite")
            if azimuth.min() < 0 or azimuth.max() >= 2 * np.pi:
                raise RejectedInputError("Cue azimuth must lie in [0, 2pi)")
            if zenith.min() < 0 or zenith.max() > np.pi / 2:
                raise RejectedInputError("Cue zenith must lie in [0, pi/2]")
        object.__setattr__(self, 'azimuth', azimuth)
        object.__setattr__(self, 'zenith', zenith)
        object.__setattr__(self, 'reflection', np.asarray(self.reflection, dtype=np.int8))
        object.__setattr__(self, 'valid', valid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.azimuth.shape


class ZenithRoots(NamedTuple):
    lo: np.ndarray
    hi: np.ndarray
    clamped: np.ndarray


def default_noise_floor(frame: PolarFrame) -> float:
    """1e-3 of the channel dynamic range."""
    return 1e-3 * float(frame.channels.max() - frame.channels.min())


def stokes_from_channels(frame: PolarFrame, noise_floor: Optional[float] = None) -> PolarMeasurement:
    """
    Compute DoLP, AoLP and mean radiance from the four channels.

    Args:
        frame: Polarization frame
        noise_floor: Radiance floor; defaults to 1e-3 of the channel dynamic range

    Returns:
        PolarMeasurement with pixels below the floor (or unpolarized) marked invalid
    """
    if noise_floor is None:
        noise_floor = default_noise_floor(frame)
    if noise_floor < 0:
        raise RejectedInputError(f"Noise floor must be non-negative, got {noise_floor}")

    i0, i45, i90, i135 = frame.channels
    s0 = (i0 + i45 + i90 + i135) / 2.0
    s1 = i0 - i90
    s2 = i45 - i135

    magnitude = np.hypot(s1, s2)
    with np.errstate(divide='ignore', invalid='ignore'):
        dolp = np.where(s0 > 0, magnitude / s0, 0.0)
        below_floor = np.where(s0 > 0, dolp < noise_floor / s0, True)
    dolp = np.clip(dolp, 0.0, 1.0)

    aolp = np.mod(0.5 * np.arctan2(s2, s1), np.pi)
    aolp[(aolp >= np.pi) | (dolp == 0)] = 0.0

    intensity = s0 / 2.0
    valid = (intensity >= noise_floor) & ~below_floor & (dolp > 0)

    logger.debug(f"Stokes: {valid.sum()} of {valid.size} pixels above noise floor {noise_floor:.3g}")
    return PolarMeasurement(dolp=dolp, aolp=aolp, intensity=intensity, valid=valid)


def channels_from_stokes(
    intensity_un: np.ndarray,
    dolp: np.ndarray,
    aolp: np.ndarray,
    angles: Sequence[float] = CHANNEL_ANGLES
) -> np.ndarray:
    """
    Transmitted radiance through linear polarizers:
    I(alpha) = (I_un / 2) (1 + dolp cos(2 alpha - 2 aolp)).

    Returns:
        Array of shape (len(angles),) + broadcast shape of the inputs
    """
    intensity_un, dolp, aolp = np.broadcast_arrays(
        np.asarray(intensity_un, dtype=np.float64),
        np.asarray(dolp, dtype=np.float64),
        np.asarray(aolp, dtype=np.float64),
    )
    return np.stack([
        0.5 * intensity_un * (1.0 + dolp * np.cos(2.0 * alpha - 2.0 * aolp))
        for alpha in angles
    ])


def azimuth_candidates(aolp: np.ndarray) -> np.ndarray:
    """
    Candidate azimuths {phi, phi + pi, phi + pi/2, phi + 3pi/2} in [0, 2pi).

    The first two come from the diffuse model, the last two from the specular
    model (see CANDIDATE_MODELS).

    Returns:
        Array of shape aolp.shape + (4,)
    """
    aolp = np.asarray(aolp, dtype=np.float64)
    offsets = np.array([0.0, np.pi, np.pi / 2, 3 * np.pi / 2])
    candidates = np.mod(aolp[..., None] + offsets, 2 * np.pi)
    candidates[candidates >= 2 * np.pi] = 0.0
    return candidates


def _check_eta(eta: float) -> None:
    if not (ETA_RANGE[0] <= eta <= ETA_RANGE[1]):
        raise RejectedInputError(f"Refractive index {eta} outside supported range {ETA_RANGE}")


def dolp_diffuse(theta: np.ndarray, eta: float) -> np.ndarray:
    """Degree of polarization of diffuse reflection at zenith theta."""
    theta = np.asarray(theta, dtype=np.float64)
    sin2 = np.sin(theta) ** 2
    numerator = (eta - 1.0 / eta) ** 2 * sin2
    denominator = (
        4.0 * np.cos(theta) * np.sqrt(eta ** 2 - sin2)
        - (eta + 1.0 / eta) ** 2 * sin2
        + 2.0 * eta ** 2 + 2.0
    )
    return numerator / denominator


def dolp_specular(theta: np.ndarray, eta: float) -> np.ndarray:
    """Degree of polarization of specular reflection at zenith theta."""
    theta = np.asarray(theta, dtype=np.float64)
    sin2 = np.sin(theta) ** 2
    numerator = 2.0 * sin2 * np.cos(theta) * np.sqrt(eta ** 2 - sin2)
    denominator = eta ** 2 - sin2 - eta ** 2 * sin2 + 2.0 * sin2 ** 2
    return numerator / denominator


def dolp_diffuse_max(eta: float) -> float:
    """Diffuse DoLP at grazing incidence, the top of the diffuse curve."""
    return float(dolp_diffuse(np.pi / 2, eta))


@lru_cache(maxsize=32)
def specular_peak(eta: float) -> Tuple[float, float]:
    """
    Locate the interior maximum of the specular DoLP curve.

    Returns:
        (theta_peak, dolp_peak)
    """
    _check_eta(eta)
    result = minimize_scalar(
        lambda t: -float(dolp_specular(t, eta)),
        bracket=(0.2, np.arctan(eta), 1.5),
        method='golden',
        options={'xtol': 1e-10}
    )
    if not result.success or not (0 < result.x < np.pi / 2):
        raise NumericalFailure(f"Could not locate the specular DoLP maximum for eta={eta}")
    return float(result.x), float(-result.fun)


@lru_cache(maxsize=32)
def _check_forward_maps(eta: float) -> None:
    """Verify the curve shapes the bisection relies on, once per eta."""
    _check_eta(eta)
    grid = np.linspace(0.0, np.pi / 2, 10_000)

    if not np.all(np.diff(dolp_diffuse(grid, eta)) > 0):
        raise NumericalFailure(f"Diffuse DoLP curve is not strictly increasing for eta={eta}")

    specular = dolp_specular(grid, eta)
    signs = np.sign(np.diff(specular))
    if abs(specular[0]) > 1e-12 or abs(specular[-1]) > 1e-12 or np.any(signs == 0) \
            or np.count_nonzero(signs[1:] != signs[:-1]) != 1 or signs[0] < 0:
        raise NumericalFailure(f"Specular DoLP curve does not have a single interior peak for eta={eta}")
    logger.debug(f"DoLP forward maps verified for eta={eta}")


def _bisect(
    forward,
    target: np.ndarray,
    lo: float,
    hi: float,
    increasing: bool
) -> np.ndarray:
    """Vectorized bisection for forward(theta) == target on [lo, hi]."""
    low = np.full(target.shape, lo)
    high = np.full(target.shape, hi)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (low + high)
        below = forward(mid) < target
        if not increasing:
            below = ~below
        low = np.where(below, mid, low)
        high = np.where(below, high, mid)
    return 0.5 * (low + high)


def zenith_diffuse(dolp: np.ndarray, eta: float = 1.5) -> Tuple[np.ndarray, np.ndarray]:
    """
    Invert the diffuse DoLP curve.

    Args:
        dolp: Degree of linear polarization (any shape)
        eta: Refractive index in [1.3, 1.8]

    Returns:
        (theta, clamped): zenith in [0, pi/2] and a mask of values above the
        curve maximum, which saturate at pi/2

    Raises:
        RejectedInputError: If eta is out of range
    """
    _check_forward_maps(eta)
    dolp = np.clip(np.asarray(dolp, dtype=np.float64), 0.0, None)
    rho_max = dolp_diffuse_max(eta)

    clamped = dolp > rho_max
    theta = _bisect(lambda t: dolp_diffuse(t, eta), np.minimum(dolp, rho_max), 0.0, np.pi / 2, True)
    theta = np.where(dolp == 0, 0.0, theta)
    theta = np.where(clamped, np.pi / 2, theta)

    if clamped.any():
        logger.debug(f"{int(clamped.sum())} diffuse zenith values clamped at pi/2")
    return theta[()], clamped[()]


def zenith_specular(dolp: np.ndarray, eta: float = 1.5) -> ZenithRoots:
    """
    Invert the specular DoLP curve, which has two roots on [0, pi/2].

    Args:
        dolp: Degree of linear polarization (any shape)
        eta: Refractive index in [1.3, 1.8]

    Returns:
        ZenithRoots(lo, hi, clamped); values above the curve maximum return the
        maximizer for both roots and are flagged clamped
    """
    _check_forward_maps(eta)
    dolp = np.clip(np.asarray(dolp, dtype=np.float64), 0.0, None)
    theta_peak, rho_peak = specular_peak(eta)

    clamped = dolp > rho_peak
    target = np.minimum(dolp, rho_peak)
    forward = lambda t: dolp_specular(t, eta)
    lo = _bisect(forward, target, 0.0, theta_peak, True)
    hi = _bisect(forward, target, theta_peak, np.pi / 2, False)

    lo = np.where(dolp == 0, 0.0, lo)
    hi = np.where(dolp == 0, np.pi / 2, hi)
    lo = np.where(clamped, theta_peak, lo)
    hi = np.where(clamped, theta_peak, hi)

    return ZenithRoots(lo[()], hi[()], clamped[()])

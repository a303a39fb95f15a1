"""
Densification module: grows sparse seed depths into a dense depth map.

Each outer iteration propagates known depths along iso-depth contours
(perpendicular to the azimuth), estimates depths one step along the azimuth
using the prior's depth differences scaled by the polarimetric zenith,
validates the new values, and smooths the result with an edge-weighted total
variation step. The loop stops when the share of newly added points falls
below the convergence ratio.
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import DensifyConfig
from core import (
    CameraModel,
    DepthMap,
    NumericalFailure,
    RejectedInputError,
    gradient,
    map_chunks,
    reproject,
)
from evaluate import absrel
from polarization import PolarCues
from prior import PriorField, wrap_angle


logger = logging.getLogger(__name__)

MIN_SIN_ZENITH = 1e-6

# 8-neighborhood offsets (dx, dy), indexed by round(azimuth / (pi/4)) mod 8
NEIGHBOR_STEPS = np.array([
    (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)
])


class EmptySeedsError(NumericalFailure, RejectedInputError):
    """Densification was asked to start from no seed at all."""


class Provenance(IntEnum):
    INVALID = 0
    SEED = 1
    PROPAGATED = 2
    ESTIMATED = 3


@dataclass(frozen=True)
class DensifyState:
    depth: DepthMap
    seedmask: np.ndarray
    provenance: np.ndarray
    iteration: int = 0

    @classmethod
    def from_seeds(cls, seeds: DepthMap) -> 'DensifyState':
        provenance = np.where(seeds.valid, Provenance.SEED, Provenance.INVALID).astype(np.uint8)
        return cls(seeds, seeds.valid.copy(), provenance, 0)

    @property
    def known(self) -> np.ndarray:
        return self.depth.valid

    def with_new(self, pixels: np.ndarray, values: np.ndarray, provenance: Provenance) -> 'DensifyState':
        """Copy with `values` written at the flat `pixels` (all previously unknown)."""
        depth = self.depth.depth.copy()
        valid = self.depth.valid.copy()
        marks = self.provenance.copy()
        depth.ravel()[pixels] = values
        valid.ravel()[pixels] = True
        marks.ravel()[pixels] = provenance
        return DensifyState(self.depth.with_values(depth, valid), self.seedmask, marks, self.iteration)


@dataclass
class DensifyStats:
    """Per-iteration records plus the final provenance map."""
    iterations: List[Dict] = field(default_factory=list)
    provenance: Optional[np.ndarray] = None
    converged: bool = False

    @property
    def trace(self) -> List[Tuple[int, int, Optional[float]]]:
        return [(r['iteration'], r['total'], r.get('absrel')) for r in self.iterations]


def extract_inliers(
    z_t: DepthMap,
    z_prev: DepthMap,
    cam_t: CameraModel,
    cam_prev: CameraModel,
    cfg: DensifyConfig
) -> DepthMap:
    """
    Keep the depths of z_t that agree with z_prev reprojected into frame t.

    A pixel survives when a reprojected depth lands on it and the two differ
    by at most consistency_frac of the depth range.
    """
    if z_t.shape != cam_t.shape or z_prev.shape != cam_prev.shape:
        raise RejectedInputError("Depth maps and cameras must share dimensions")

    reprojected = reproject(z_prev, cam_prev, cam_t, z_range=z_t.z_range)
    threshold = cfg.consistency_frac * z_t.span
    keep = z_t.valid & reprojected.valid & (np.abs(z_t.depth - reprojected.depth) <= threshold)

    if not keep.any():
        logger.warning("Two-view consistency left no inlier seeds (empty overlap)")
    logger.info(f"Inlier extraction kept {keep.sum()} of {z_t.count} seeds (threshold {threshold:.4g})")
    return DepthMap(np.where(keep, z_t.depth, 0.0), keep, z_t.z_range)


def resolve_claims(pixels: np.ndarray, distances: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """
    Indices of the winning claim per pixel: shortest distance, then smallest
    source pixel index. The order is total, so the result does not depend on
    the order claims were produced in.
    """
    if pixels.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((sources, distances, pixels))
    ordered = pixels[order]
    first = np.ones(ordered.size, dtype=bool)
    first[1:] = ordered[1:] != ordered[:-1]
    return order[first]


def _walk(
    sources: np.ndarray,
    cues: PolarCues,
    seedmask: np.ndarray,
    known: np.ndarray,
    azimuth_stop: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trace both iso-depth walks of every source and collect claims on unknown pixels."""
    height, width = cues.shape
    azimuth = cues.azimuth.ravel()
    cue_ok = cues.valid.ravel()
    seed = seedmask.ravel()
    known = known.ravel()

    phi = azimuth[sources]
    dx, dy = -np.sin(phi), np.cos(phi)
    scale = np.maximum(np.abs(dx), np.abs(dy))
    dx, dy = dx / scale, dy / scale

    walk_src = np.concatenate([sources, sources])
    y0, x0 = np.divmod(walk_src, width)
    x0, y0 = x0.astype(np.float64), y0.astype(np.float64)
    dx = np.concatenate([dx, -dx])
    dy = np.concatenate([dy, -dy])
    step_length = np.hypot(dx, dy)
    previous = walk_src.copy()
    alive = np.arange(walk_src.size)

    claim_pixels, claim_dist, claim_src = [], [], []
    for k in range(1, max(width, height) + 1):
        if alive.size == 0:
            break
        xs = np.rint(x0[alive] + k * dx[alive]).astype(np.int64)
        ys = np.rint(y0[alive] + k * dy[alive]).astype(np.int64)
        inside = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        target = np.where(inside, ys * width + xs, 0)

        turn = np.abs(wrap_angle(azimuth[target] - azimuth[previous[alive]]))
        go = inside & cue_ok[target] & ~seed[target] & (turn <= azimuth_stop)

        claim = go & ~known[target]
        if claim.any():
            claim_pixels.append(target[claim])
            claim_dist.append(k * step_length[alive[claim]])
            claim_src.append(walk_src[alive[claim]])

        previous[alive[go]] = target[go]
        alive = alive[go]

    if not claim_pixels:
        empty = np.zeros(0, dtype=np.int64)
        return empty, np.zeros(0), empty
    return np.concatenate(claim_pixels), np.concatenate(claim_dist), np.concatenate(claim_src)


def propagate(
    state: DensifyState,
    cues: PolarCues,
    cfg: DensifyConfig,
    sources: Optional[np.ndarray] = None,
    threads: int = 1
) -> DensifyState:
    """
    Carry known depths along iso-depth contours.

    From every known pixel with a valid cue (or only those in `sources`), walk
    the discrete ray perpendicular to the azimuth in both directions, handing
    the source depth to every unknown pixel passed. Walks stop at the border,
    at invalid cues, at seed pixels, and where the azimuth turns by more than
    cfg.azimuth_stop between consecutive pixels. Known pixels are crossed but
    not overwritten.

    Args:
        state: Current densification state
        cues: Disambiguated cues of the keyframe
        cfg: Densification parameters
        sources: Optional mask restricting the walk origins
        threads: Worker threads (0 = one per CPU); results do not depend on it

    Returns:
        New state with propagated pixels marked PROPAGATED
    """
    if cues.shape != state.depth.shape:
        raise RejectedInputError("Cues and depth map differ in size")

    origin = state.known & cues.valid
    if sources is not None:
        origin &= sources
    flat_sources = np.flatnonzero(origin)

    def run(start, stop):
        return _walk(flat_sources[start:stop], cues, state.seedmask, state.known, cfg.azimuth_stop)

    chunks = map_chunks(run, flat_sources.size, threads)
    pixels = np.concatenate([c[0] for c in chunks])
    distances = np.concatenate([c[1] for c in chunks])
    claim_src = np.concatenate([c[2] for c in chunks])

    winners = resolve_claims(pixels, distances, claim_src)
    values = state.depth.depth.ravel()[claim_src[winners]]
    logger.debug(f"Propagation from {flat_sources.size} sources filled {winners.size} pixels")
    return state.with_new(pixels[winners], values, Provenance.PROPAGATED)


def estimate_along_gradient(
    state: DensifyState,
    cues: PolarCues,
    field: PriorField,
    cfg: DensifyConfig,
    sources: Optional[np.ndarray] = None
) -> DensifyState:
    """
    Estimate depths one pixel along the azimuth from every known pixel.

    The prior's depth difference to the neighbor is rescaled by
    sin(zenith) / sin(prior zenith) and applied relative to the prior depth:

        z_next = z_p * (z'_p + ratio * (z'_next - z'_p)) / z'_p

    Only unknown neighbors with a valid prior are written; results outside the
    depth range are dropped.
    """
    if field.shape != state.depth.shape or cues.shape != state.depth.shape:
        raise RejectedInputError("Cues, prior and depth map differ in size")

    height, width = state.depth.shape
    sin_prior = np.sin(field.zenith_prior)
    origin = state.known & cues.valid & field.valid & (sin_prior >= MIN_SIN_ZENITH)
    if sources is not None:
        origin &= sources
    ys, xs = np.nonzero(origin)
    flat = ys * width + xs

    ratio = np.sin(cues.zenith[ys, xs]) / sin_prior[ys, xs]
    zprime = field.zprime.depth
    prior_ok = field.zprime.valid & field.valid
    z_p = state.depth.depth[ys, xs]
    zprime_p = zprime[ys, xs]
    step = NEIGHBOR_STEPS[np.rint(cues.azimuth[ys, xs] / (np.pi / 4)).astype(np.int64) % 8]

    pixels, values, distances, claim_src = [], [], [], []
    z_min, z_max = state.depth.z_range
    for sign in (1, -1):
        nx = xs + sign * step[:, 0]
        ny = ys + sign * step[:, 1]
        inside = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
        nx_c, ny_c = np.where(inside, nx, 0), np.where(inside, ny, 0)
        usable = inside & prior_ok[ny_c, nx_c] & ~state.known[ny_c, nx_c]

        delta = zprime[ny_c, nx_c] - zprime_p
        estimate = z_p * (zprime_p + ratio * delta) / zprime_p
        usable &= np.isfinite(estimate) & (estimate >= z_min) & (estimate <= z_max)

        pixels.append((ny_c * width + nx_c)[usable])
        values.append(estimate[usable])
        distances.append(np.hypot(step[usable, 0], step[usable, 1]).astype(np.float64))
        claim_src.append(flat[usable])

    pixels = np.concatenate(pixels)
    values = np.concatenate(values)
    winners = resolve_claims(pixels, np.concatenate(distances), np.concatenate(claim_src))
    logger.debug(f"Estimation from {flat.size} sources filled {winners.size} pixels")
    return state.with_new(pixels[winners], values[winners], Provenance.ESTIMATED)


def windowed_median(depth: DepthMap, pixels: np.ndarray, window: int) -> np.ndarray:
    """Median of the known depths in a window around each flat pixel index (NaN if none)."""
    radius = window // 2
    values = np.where(depth.valid, depth.depth, np.nan)
    padded = np.pad(values, radius, mode='constant', constant_values=np.nan)
    windows = sliding_window_view(padded, (window, window))
    ys, xs = np.divmod(pixels, depth.shape[1])
    patches = windows[ys, xs].reshape(pixels.size, -1)
    if pixels.size == 0:
        return np.zeros(0)
    # All-NaN windows are expected at isolated pixels
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(patches, axis=1)


def validate(
    state: DensifyState,
    new_mask: np.ndarray,
    cfg: DensifyConfig,
    reference: Optional[DepthMap] = None
) -> Tuple[DensifyState, int]:
    """
    Re-check newly added depths.

    In two-view mode a new pixel is rejected when `reference` (another view's
    depth reprojected into this keyframe) covers it and disagrees by more than
    consistency_frac of the depth range; uncovered pixels are kept. Otherwise
    (MAD mode, or no reference) a new pixel is rejected when it deviates from
    the median of its known neighborhood by more than the same threshold.

    Returns:
        (state without the rejected pixels, number rejected)
    """
    threshold = cfg.consistency_frac * state.depth.span
    pixels = np.flatnonzero(new_mask & state.known & ~state.seedmask)
    if pixels.size == 0:
        return state, 0

    values = state.depth.depth.ravel()[pixels]
    if cfg.validation == 'two_view' and reference is not None:
        covered = reference.valid.ravel()[pixels]
        diff = np.abs(values - reference.depth.ravel()[pixels])
        reject = covered & (diff > threshold)
    else:
        median = windowed_median(state.depth, pixels, cfg.mad_window)
        reject = np.abs(values - median) > threshold

    rejected = pixels[reject]
    if rejected.size == 0:
        return state, 0

    depth = state.depth.depth.copy()
    valid = state.depth.valid.copy()
    provenance = state.provenance.copy()
    valid.ravel()[rejected] = False
    depth.ravel()[rejected] = 0.0
    provenance.ravel()[rejected] = Provenance.INVALID
    return DensifyState(state.depth.with_values(depth, valid), state.seedmask, provenance, state.iteration), int(rejected.size)


def edge_weights(image: np.ndarray, zeta: float) -> np.ndarray:
    """tau = exp(-zeta |grad I|) on the image normalized to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    low, high = image.min(), image.max()
    normalized = (image - low) / (high - low) if high > low else np.zeros_like(image)
    grad_x, grad_y = gradient(normalized)
    return np.exp(-zeta * np.hypot(grad_x, grad_y))


def _masked_grad(z: np.ndarray, pair_x: np.ndarray, pair_y: np.ndarray) -> np.ndarray:
    g = np.zeros(z.shape + (2,))
    g[:, :-1, 0] = np.where(pair_x, z[:, 1:] - z[:, :-1], 0.0)
    g[:-1, :, 1] = np.where(pair_y, z[1:, :] - z[:-1, :], 0.0)
    return g


def _masked_grad_adjoint(p: np.ndarray, pair_x: np.ndarray, pair_y: np.ndarray) -> np.ndarray:
    """Adjoint of _masked_grad (negative divergence)."""
    out = np.zeros(p.shape[:2])
    px = np.where(pair_x, p[:, :-1, 0], 0.0)
    py = np.where(pair_y, p[:-1, :, 1], 0.0)
    out[:, :-1] -= px
    out[:, 1:] += px
    out[:-1, :] -= py
    out[1:, :] += py
    return out


def tv_objective(
    z: np.ndarray,
    f: np.ndarray,
    known: np.ndarray,
    tau: np.ndarray,
    lam: float
) -> float:
    """0.5 * ||z - f||^2 + lam * sum tau |grad z| over known pixels and known pairs."""
    pair_x = known[:, 1:] & known[:, :-1]
    pair_y = known[1:, :] & known[:-1, :]
    g = _masked_grad(z, pair_x, pair_y)
    data = 0.5 * np.sum(np.where(known, z - f, 0.0) ** 2)
    return float(data + lam * np.sum(tau * np.sqrt(np.sum(g ** 2, axis=-1))))


def tv_descent(
    f: np.ndarray,
    known: np.ndarray,
    tau: np.ndarray,
    lam: float,
    iterations: int,
    bounds: Optional[Tuple[float, float]] = None
) -> Tuple[np.ndarray, List[float]]:
    """
    Accelerated primal-dual iterations on the weighted-TV objective.

    The returned iterate never has a larger objective than the input: each
    step's candidates (primal iterate and dual-implied primal, both limited to
    3 * lam * max(tau) from f and clipped to `bounds`) are accepted only if
    they do not increase the objective.

    Returns:
        (z, objective history starting with the input's objective)
    """
    f = np.where(known, f, 0.0)
    best = f.copy()
    best_obj = tv_objective(best, f, known, tau, lam)
    history = [best_obj]

    tau_max = float(tau[known].max()) if known.any() else 0.0
    if lam == 0 or tau_max == 0 or iterations <= 0:
        return best, history + [best_obj] * max(iterations, 0)

    pair_x = known[:, 1:] & known[:, :-1]
    pair_y = known[1:, :] & known[:-1, :]
    weights = tau[..., None]
    limit = 3.0 * lam * tau_max * (1.0 - 1e-12)

    # ||K||^2 <= 8 tau_max^2 for K = tau * grad
    step_primal = step_dual = 1.0 / (np.sqrt(8.0) * tau_max)
    z = f.copy()
    z_bar = f.copy()
    y = np.zeros(f.shape + (2,))

    for _ in range(iterations):
        y = y + step_dual * weights * _masked_grad(z_bar, pair_x, pair_y)
        magnitude = np.sqrt(np.sum(y ** 2, axis=-1, keepdims=True))
        y = y / np.maximum(1.0, magnitude / lam)

        adjoint = _masked_grad_adjoint(weights * y, pair_x, pair_y)
        z_new = (z - step_primal * adjoint + step_primal * f) / (1.0 + step_primal)
        z_new = np.where(known, z_new, 0.0)

        theta = 1.0 / np.sqrt(1.0 + 2.0 * step_primal)
        step_primal *= theta
        step_dual /= theta
        z_bar = z_new + theta * (z_new - z)
        z = z_new

        for candidate in (f - adjoint, z_new):
            candidate = np.clip(candidate, f - limit, f + limit)
            if bounds is not None:
                candidate = np.clip(candidate, bounds[0], bounds[1])
            candidate = np.where(known, candidate, 0.0)
            objective = tv_objective(candidate, f, known, tau, lam)
            if objective <= best_obj:
                best, best_obj = candidate, objective
        history.append(best_obj)

    return best, history


def tv_smooth(
    state: DensifyState,
    image: np.ndarray,
    cfg: DensifyConfig,
    iterations: Optional[int] = None
) -> DensifyState:
    """
    Edge-aware total-variation smoothing of the known depths.

    Minimizes 0.5 ||z - z_t||^2 + lambda * sum tau_p |grad z_p| over the known
    pixels, with tau = exp(-zeta |grad I|) from the mean-intensity image. With
    the default few iterations this is a partial minimization.
    """
    iterations = cfg.tv_iters if iterations is None else iterations
    known = state.known
    if cfg.lambda_ == 0 or not known.any():
        return state

    tau = edge_weights(image, cfg.zeta)
    z_min, z_max = state.depth.z_range
    f = state.depth.depth
    if cfg.log_depth:
        f = np.where(known, np.log(np.where(known, f, 1.0)), 0.0)
        bounds = (np.log(z_min), np.log(z_max))
    else:
        bounds = (z_min, z_max)

    z, history = tv_descent(f, known, tau, cfg.lambda_, iterations, bounds)
    if cfg.log_depth:
        z = np.where(known, np.exp(z), 0.0)

    logger.debug(f"TV objective {history[0]:.6g} -> {history[-1]:.6g} over {iterations} iterations")
    return DensifyState(state.depth.with_values(z, known), state.seedmask, state.provenance, state.iteration)


def densify_keyframe(
    seeds: DepthMap,
    cues: PolarCues,
    field: PriorField,
    image: np.ndarray,
    cfg: DensifyConfig,
    reference: Optional[DepthMap] = None,
    gt: Optional[DepthMap] = None,
    threads: int = 1
) -> Tuple[DepthMap, DensifyStats]:
    """
    Run the propagate / estimate / validate / smooth loop on one keyframe.

    Args:
        seeds: Inlier seed depths
        cues: Disambiguated cues
        field: Prior field
        image: Mean-intensity image of the keyframe
        cfg: Densification parameters
        reference: Other view's depth reprojected into this keyframe, used for
            two-view validation (MAD validation without it)
        gt: Ground truth for per-iteration AbsRel
        threads: Worker threads for propagation

    Returns:
        (dense depth, DensifyStats)

    Raises:
        EmptySeedsError: If there are no seeds
    """
    if seeds.count == 0:
        raise EmptySeedsError("Densification needs at least one seed depth")

    state = DensifyState.from_seeds(seeds)
    stats = DensifyStats()

    def record(iteration, **counts):
        entry = {'iteration': iteration, 'total': state.depth.count, **counts}
        if gt is not None:
            try:
                entry['absrel'] = absrel(state.depth, gt)
            except NumericalFailure:
                entry['absrel'] = None
        stats.iterations.append(entry)

    record(0, propagated=0, estimated=0, rejected=0, new=0)
    logger.info(f"Densifying from {seeds.count} seeds")

    frontier = None
    for iteration in range(1, cfg.max_outer_iters + 1):
        before = state.known.copy()

        state = propagate(state, cues, cfg, sources=frontier, threads=threads)
        propagated = int((state.known & ~before).sum())

        state = estimate_along_gradient(state, cues, field, cfg)
        estimated = int((state.known & ~before).sum()) - propagated

        state, rejected = validate(state, state.known & ~before, cfg, reference)
        new_mask = state.known & ~before
        new = int(new_mask.sum())
        state = DensifyState(state.depth, state.seedmask, state.provenance, iteration)

        if new == 0:
            record(iteration, propagated=propagated, estimated=estimated, rejected=rejected, new=0)
            stats.converged = True
            logger.info(f"Iteration {iteration}: no new points, stopping")
            break

        state = tv_smooth(state, image, cfg)
        record(iteration, propagated=propagated, estimated=estimated, rejected=rejected, new=new)
        ratio = new / state.depth.count
        logger.info(
            f"Iteration {iteration}: +{propagated} propagated, +{estimated} estimated, "
            f"-{rejected} rejected, {state.depth.count} total (new ratio {ratio:.3f})"
        )
        if ratio < cfg.convergence_ratio:
            stats.converged = True
            break
        frontier = new_mask

    if not stats.converged:
        logger.warning(f"Densification stopped at the {cfg.max_outer_iters}-iteration cap")
    stats.provenance = state.provenance
    return state.depth, stats

"""
Core geometry module for polarimetric depth reconstruction.

Holds the shared image-space data types (depth maps, normal maps, pinhole
cameras), the error hierarchy, pinhole projection, depth reprojection between
keyframes, image gradients and the surface-gradient normal formula used by the
prior and synthesis modules.

Conventions: right-handed camera frame with +Z into the scene, image origin at
the top-left pixel center, +x right, +y down. Poses are camera-from-world:
X_cam = R @ X_world + t.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation


logger = logging.getLogger(__name__)


class PipelineError(Exception):
    """Base class for every error raised by the reconstruction pipeline."""


class RejectedInputError(PipelineError, ValueError):
    """An input violates a documented precondition."""


class InputFileError(RejectedInputError):
    """An input file exists but its contents are malformed."""


class NumericalFailure(PipelineError, ArithmeticError):
    """A numerical stage could not produce a result."""


class UndefinedResultError(NumericalFailure):
    """A metric or estimate has no support (e.g. no co-valid pixels)."""


@dataclass(frozen=True)
class DepthMap:
    """
    Per-pixel metric (or relative) depth with a validity mask.

    Invalid pixels carry the sentinel 0.0, which no operation reads.

    Attributes:
        depth: (H, W) float64 depth values in meters (arbitrary units for priors)
        valid: (H, W) boolean mask
        z_range: declared (z_min, z_max) with z_min > 0
    """
    depth: np.ndarray
    valid: np.ndarray
    z_range: Tuple[float, float]

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)

        if depth.ndim != 2 or depth.shape != valid.shape:
            raise RejectedInputError(
                f"Depth map and mask must be matching 2D arrays, got {depth.shape} and {valid.shape}"
            )
        if depth.shape[0] < 2 or depth.shape[1] < 2:
            raise RejectedInputError(f"Depth map must be at least 2x2, got {depth.shape}")

        z_min, z_max = float(self.z_range[0]), float(self.z_range[1])
        if not (np.isfinite(z_min) and np.isfinite(z_max)) or z_min <= 0 or z_max < z_min:
            raise RejectedInputError(f"Invalid depth range ({z_min}, {z_max})")

        values = depth[valid]
        if values.size:
            if not np.all(np.isfinite(values)):
                raise RejectedInputError("Depth map holds non-finite values on valid pixels")
            tol = 1e-9 * z_max
            if values.min() < z_min - tol or values.max() > z_max + tol:
                raise RejectedInputError(
                    f"Valid depths [{values.min():.6g}, {values.max():.6g}] "
                    f"fall outside the declared range ({z_min:.6g}, {z_max:.6g})"
                )

        depth = np.where(valid, depth, 0.0)
        depth.flags.writeable = False
        valid = valid.copy()
        valid.flags.writeable = False
        object.__setattr__(self, 'depth', depth)
        object.__setattr__(self, 'valid', valid)
        object.__setattr__(self, 'z_range', (z_min, z_max))

    @classmethod
    def from_array(
        cls,
        values: np.ndarray,
        z_range: Optional[Tuple[float, float]] = None
    ) -> 'DepthMap':
        """
        Build a depth map from a raw array, treating non-positive and
        non-finite values as invalid.

        Args:
            values: 2D array of depths
            z_range: declared range; inferred from the valid values when omitted

        Returns:
            DepthMap

        Raises:
            RejectedInputError: If no range is given and no pixel is valid
        """
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        if z_range is None:
            if not valid.any():
                raise RejectedInputError("Cannot infer a depth range from an all-invalid map")
            z_range = (float(values[valid].min()), float(values[valid].max()))
        else:
            valid &= (values >= z_range[0]) & (values <= z_range[1])
        return cls(np.where(valid, values, 0.0), valid, z_range)

    @classmethod
    def empty(cls, shape: Tuple[int, int], z_range: Tuple[float, float]) -> 'DepthMap':
        return cls(np.zeros(shape), np.zeros(shape, dtype=bool), z_range)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    @property
    def span(self) -> float:
        return self.z_range[1] - self.z_range[0]

    def with_values(self, depth: np.ndarray, valid: np.ndarray) -> 'DepthMap':
        """Copy with new values, clipping valid depths into the declared range."""
        clipped = np.clip(depth, self.z_range[0], self.z_range[1])
        return DepthMap(np.where(valid, clipped, 0.0), valid, self.z_range)


@dataclass(frozen=True)
class CameraModel:
    """
    Pinhole camera: focal length and principal point in pixels, image size,
    and a rigid camera-from-world pose.
    """
    f: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

        if not (np.isfinite(self.f) and self.f > 0):
            raise RejectedInputError(f"Focal length must be positive, got {self.f}")
        if self.width < 2 or self.height < 2:
            raise RejectedInputError(f"Image must be at least 2x2, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise RejectedInputError(
                f"Principal point ({self.cx}, {self.cy}) lies outside the {self.width}x{self.height} image"
            )
        if not np.all(np.isfinite(translation)):
            raise RejectedInputError("Camera translation must be finite")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-9):
            raise RejectedInputError("Camera rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise RejectedInputError("Camera rotation must have determinant +1")

        object.__setattr__(self, 'f', float(self.f))
        object.__setattr__(self, 'cx', float(self.cx))
        object.__setattr__(self, 'cy', float(self.cy))
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def from_quaternion(
        cls,
        f: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        quaternion_xyzw: Sequence[float],
        translation: Sequence[float]
    ) -> 'CameraModel':
        """Build a camera from a scalar-last unit quaternion and translation."""
        quat = np.asarray(quaternion_xyzw, dtype=np.float64)
        norm = np.linalg.norm(quat)
        if not np.isfinite(norm) or norm == 0:
            raise RejectedInputError("Pose quaternion must be finite and non-zero")
        rotation = Rotation.from_quat(quat / norm).as_matrix()
        # Re-orthonormalize: float round-off can exceed the 1e-9 determinant check.
        u, _, vt = np.linalg.svd(rotation)
        return cls(f, cx, cy, width, height, u @ vt, translation)

    @classmethod
    def looking_at(
        cls,
        f: float,
        width: int,
        height: int,
        eye: Sequence[float],
        target: Sequence[float],
        up: Sequence[float] = (0.0, -1.0, 0.0)
    ) -> 'CameraModel':
        """
        Camera at `eye` looking at `target` with the principal point centered.

        `up` is the world direction that should appear toward the top of the
        image (the camera's -Y axis).
        """
        eye = np.asarray(eye, dtype=np.float64)
        z_axis = np.asarray(target, dtype=np.float64) - eye
        z_axis /= np.linalg.norm(z_axis)
        # Image +y points down, so the camera y axis is the negated up vector
        # with its component along the optical axis removed.
        y_axis = -np.asarray(up, dtype=np.float64)
        y_axis = y_axis - np.dot(y_axis, z_axis) * z_axis
        if np.linalg.norm(y_axis) < 1e-12:
            raise RejectedInputError("Camera up vector is parallel to the viewing direction")
        y_axis /= np.linalg.norm(y_axis)
        x_axis = np.cross(y_axis, z_axis)
        # Rows of R are the camera axes expressed in world coordinates.
        rotation = np.stack([x_axis, y_axis, z_axis])
        translation = -rotation @ eye
        return cls(f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, rotation, translation)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def quaternion_xyzw(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_quat()

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> 'CameraModel':
        return CameraModel(self.f, self.cx, self.cy, self.width, self.height, rotation, translation)

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        return (points_cam - self.translation) @ self.rotation

    def from_world(self, points_world: np.ndarray) -> np.ndarray:
        return points_world @ self.rotation.T + self.translation


@dataclass(frozen=True)
class NormalMap:
    """
    Unit surface normals in camera coordinates, oriented with n_z >= 0 (the
    orientation produced by the surface-gradient formula).
    """
    normals: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        normals = np.asarray(self.normals, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if normals.ndim != 3 or normals.shape[2] != 3 or normals.shape[:2] != valid.shape:
            raise RejectedInputError(f"Normal map must be (H, W, 3), got {normals.shape}")

        picked = normals[valid]
        if picked.size:
            if np.abs(np.linalg.norm(picked, axis=1) - 1.0).max() > 1e-6:
                raise RejectedInputError("Valid normals must have unit length")
            if picked[:, 2].min() < -1e-12:
                raise RejectedInputError("Valid normals must satisfy n_z >= 0")

        normals = np.where(valid[..., None], normals, 0.0)
        object.__setattr__(self, 'normals', normals)
        object.__setattr__(self, 'valid', valid.copy())


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (xs, ys) float pixel coordinates of shape (H, W)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def _check_dimensions(depth: DepthMap, cam: CameraModel) -> None:
    if depth.shape != cam.shape:
        raise RejectedInputError(
            f"Depth map {depth.shape[1]}x{depth.shape[0]} does not match camera {cam.width}x{cam.height}"
        )


def backproject(
    depth: DepthMap,
    cam: CameraModel,
    return_pixels: bool = False
):
    """
    Lift every valid pixel to a 3D point in the camera frame.

    Args:
        depth: Depth map with the camera's dimensions
        cam: Pinhole camera
        return_pixels: Also return the flat (row-major) pixel index of each point

    Returns:
        (N, 3) array of camera-frame points in meters, ordered by pixel index;
        with return_pixels, a tuple (points, pixel_indices)

    Raises:
        RejectedInputError: If dimensions do not match
    """
    _check_dimensions(depth, cam)

    flat_index = np.flatnonzero(depth.valid)
    ys, xs = np.divmod(flat_index, cam.width)
    z = depth.depth.ravel()[flat_index]

    points = np.empty((flat_index.size, 3), dtype=np.float64)
    points[:, 0] = (xs - cam.cx) * z / cam.f
    points[:, 1] = (ys - cam.cy) * z / cam.f
    points[:, 2] = z

    if return_pixels:
        return points, flat_index
    return points


def project(points_cam: np.ndarray, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Project camera-frame points to continuous pixel coordinates.

    Returns:
        (u, v, z) arrays; points with z <= 0 get NaN pixel coordinates
    """
    z = points_cam[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        u = np.where(z > 0, cam.f * points_cam[:, 0] / z + cam.cx, np.nan)
        v = np.where(z > 0, cam.f * points_cam[:, 1] / z + cam.cy, np.nan)
    return u, v, z


def reproject(
    depth_src: DepthMap,
    cam_src: CameraModel,
    cam_dst: CameraModel,
    z_range: Optional[Tuple[float, float]] = None
) -> DepthMap:
    """
    Reproject a depth map into another keyframe.

    Every valid source pixel is backprojected, moved by the relative pose and
    projected into the destination, rounding to the nearest pixel. When several
    sources land on one destination pixel the smallest depth wins, ties broken
    by the smallest source pixel index. Points behind the destination camera,
    outside its image or outside the depth range are dropped.

    Args:
        depth_src: Source depth map
        cam_src: Source camera (dimensions must match depth_src)
        cam_dst: Destination camera
        z_range: Range of the output map (defaults to the source range)

    Returns:
        DepthMap in the destination view (possibly empty)

    Raises:
        RejectedInputError: On dimension mismatch or non-finite relative pose
    """
    _check_dimensions(depth_src, cam_src)
    if not (np.all(np.isfinite(cam_dst.rotation)) and np.all(np.isfinite(cam_dst.translation))):
        raise RejectedInputError("Destination pose must be finite")

    z_range = z_range or depth_src.z_range
    points, src_index = backproject(depth_src, cam_src, return_pixels=True)
    points_dst = cam_dst.from_world(cam_src.to_world(points))
    u, v, z = project(points_dst, cam_dst)

    with np.errstate(invalid='ignore'):
        keep = np.isfinite(u) & np.isfinite(v)
        col = np.rint(np.where(keep, u, -1)).astype(np.int64)
        row = np.rint(np.where(keep, v, -1)).astype(np.int64)
    keep &= (col >= 0) & (col < cam_dst.width) & (row >= 0) & (row < cam_dst.height)
    keep &= (z >= z_range[0]) & (z <= z_range[1])

    out = np.zeros(cam_dst.shape, dtype=np.float64)
    valid = np.zeros(cam_dst.shape, dtype=bool)
    if keep.any():
        dst_index = row[keep] * cam_dst.width + col[keep]
        z_kept = z[keep]
        order = np.lexsort((src_index[keep], z_kept, dst_index))
        dst_sorted = dst_index[order]
        first = np.ones(dst_sorted.size, dtype=bool)
        first[1:] = dst_sorted[1:] != dst_sorted[:-1]
        winners = order[first]
        out.ravel()[dst_index[winners]] = z_kept[winners]
        valid.ravel()[dst_index[winners]] = True

    logger.debug(f"Reprojected {keep.sum()} of {src_index.size} points, {valid.sum()} pixels filled")
    return DepthMap(out, valid, z_range)


def gradient(grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel image gradient of a single-channel grid.

    Central differences in the interior, one-sided differences at the borders;
    units are value-units per pixel.

    Returns:
        (grad_x, grad_y)
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise RejectedInputError(f"Gradient needs a single-channel grid, got shape {grid.shape}")
    grad_y, grad_x = np.gradient(grid)
    return grad_x, grad_y


def interior_of(valid: np.ndarray) -> np.ndarray:
    """Valid pixels whose existing 4-neighbors are all valid (image borders count as valid)."""
    padded = np.pad(valid, 1, mode='constant', constant_values=True)
    return (
        valid
        & padded[:-2, 1:-1] & padded[2:, 1:-1]
        & padded[1:-1, :-2] & padded[1:-1, 2:]
    )


def viewing_rays(cam: CameraModel) -> np.ndarray:
    """Unit ray directions (H, W, 3) from the camera center through each pixel."""
    xs, ys = pixel_grid(cam.height, cam.width)
    rays = np.stack([(xs - cam.cx) / cam.f, (ys - cam.cy) / cam.f, np.ones_like(xs)], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def surface_gradient_normals(
    z: np.ndarray,
    grad_x: np.ndarray,
    grad_y: np.ndarray,
    cam: CameraModel
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unnormalized normals from a depth map and its pixel gradient:

        n' = [-f gx, -f gy, (x - x0) gx + (y - y0) gy + z]

    Returns:
        (n_prime (H, W, 3), norm (H, W))
    """
    xs, ys = pixel_grid(cam.height, cam.width)
    n_prime = np.stack([
        -cam.f * grad_x,
        -cam.f * grad_y,
        (xs - cam.cx) * grad_x + (ys - cam.cy) * grad_y + z,
    ], axis=-1)
    return n_prime, np.linalg.norm(n_prime, axis=-1)


def merge_point_clouds(
    clouds: Sequence[Tuple[np.ndarray, np.ndarray]],
    voxel_size: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Merge world-frame point clouds, keeping the first point in every voxel.

    Args:
        clouds: Sequence of (points (N, 3), normals (N, 3)) in keyframe order
        voxel_size: Voxel edge length in meters

    Returns:
        (points, normals) of the merged cloud, in first-seen order
    """
    if voxel_size <= 0:
        raise RejectedInputError(f"Voxel size must be positive, got {voxel_size}")
    if not clouds:
        return np.zeros((0, 3)), np.zeros((0, 3))

    points = np.concatenate([c[0] for c in clouds], axis=0)
    normals = np.concatenate([c[1] for c in clouds], axis=0)
    if points.shape[0] == 0:
        return points, normals

    keys = np.floor(points / voxel_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first.sort()
    logger.info(f"Merged {points.shape[0]} points into {first.size} voxels")
    return points[first], normals[first]


def resolve_threads(threads: int) -> int:
    """0 means one worker per CPU."""
    if threads < 0:
        raise RejectedInputError(f"Thread count must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def split_chunks(count: int, threads: int) -> List[Tuple[int, int]]:
    """Split range(count) into at most `threads` contiguous (start, stop) chunks."""
    parts = max(1, min(resolve_threads(threads), count))
    bounds = np.linspace(0, count, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a] or [(0, 0)]


def map_chunks(
    func: Callable[[int, int], object],
    count: int,
    threads: int
) -> List[object]:
    """
    Run func(start, stop) over contiguous chunks of range(count).

    Results come back in chunk order regardless of scheduling, so callers that
    concatenate them see the sequential order.
    """
    chunks = split_chunks(count, threads)
    if len(chunks) == 1:
        return [func(*chunks[0])]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(lambda c: func(*c), chunks))

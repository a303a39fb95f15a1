"""
File I/O module.

Reads and writes every on-disk artifact: PFM float maps (depth, prior, angles),
16-bit channel PNGs with a radiance-scale sidecar, 8-bit label PNGs, the
azimuth color-wheel visualization, camera JSON, PLY point clouds, and the
evaluation report files.
"""

import csv
import json
import logging
import re
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core import CameraModel, DepthMap, InputFileError, RejectedInputError
from polarization import CHANNEL_ANGLES, CHANNEL_SUFFIXES, PolarCues, PolarFrame


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ANGLE_INVALID = -1.0
UINT16_MAX = 65535


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """
    Write a single-channel float map as little-endian PFM.

    Rows are stored bottom-to-top as the format requires.
    """
    data = np.asarray(data, dtype='<f4')
    if data.ndim != 2:
        raise RejectedInputError(f"PFM writer expects a 2D map, got shape {data.shape}")
    height, width = data.shape
    with open(path, 'wb') as f:
        f.write(b'Pf\n')
        f.write(f'{width} {height}\n'.encode('ascii'))
        f.write(b'-1\n')
        f.write(np.flipud(data).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    """
    Read a single-channel PFM into a float64 (H, W) array.

    Raises:
        FileNotFoundError: If the file is missing
        InputFileError: If the header or payload is malformed
    """
    with open(path, 'rb') as f:
        header = f.readline().rstrip()
        if header != b'Pf':
            raise InputFileError(f"{path}: expected a grayscale PFM ('Pf'), got {header[:8]!r}")
        dims = re.match(rb'^(\d+)\s+(\d+)\s*$', f.readline())
        if not dims:
            raise InputFileError(f"{path}: malformed PFM dimensions line")
        width, height = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(f.readline().rstrip())
        except ValueError:
            raise InputFileError(f"{path}: malformed PFM scale line")
        dtype = '<f4' if scale < 0 else '>f4'
        payload = np.frombuffer(f.read(), dtype=dtype)

    if payload.size != width * height:
        raise InputFileError(f"{path}: expected {width * height} values, found {payload.size}")
    return np.flipud(payload.reshape(height, width)).astype(np.float64)


def write_depth(path: PathLike, depth: DepthMap) -> None:
    """Depth PFM; invalid pixels are written as 0 (non-positive means invalid)."""
    write_pfm(path, np.where(depth.valid, depth.depth, 0.0))


def read_depth(path: PathLike, z_range: Optional[Tuple[float, float]] = None) -> DepthMap:
    return DepthMap.from_array(read_pfm(path), z_range)


def write_angles(path: PathLike, values: np.ndarray, valid: np.ndarray) -> None:
    """Angle map PFM (radians) with -1 on invalid pixels."""
    write_pfm(path, np.where(valid, values, ANGLE_INVALID))


def read_angles(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    values = read_pfm(path)
    valid = values >= 0
    return np.where(valid, values, 0.0), valid


def channel_paths(stem: PathLike) -> List[Path]:
    stem = str(stem)
    return [Path(f"{stem}_{suffix}.png") for suffix in CHANNEL_SUFFIXES]


def _meta_path(stem: PathLike) -> Path:
    return Path(f"{stem}_meta.json")


def write_channels(stem: PathLike, frame: PolarFrame, radiance_scale: Optional[float] = None) -> List[Path]:
    """
    Write the four channels as linear 16-bit PNGs plus a metadata sidecar.

    Stored value = round(radiance * radiance_scale). By default the scale maps
    the brightest channel value to 95% of the 16-bit range.

    Returns:
        Written paths
    """
    peak = float(frame.channels.max())
    if radiance_scale is None:
        radiance_scale = 0.95 * UINT16_MAX / peak if peak > 0 else 1.0
    if peak * radiance_scale > UINT16_MAX:
        logger.warning(f"Radiance scale {radiance_scale:.6g} saturates {stem} channels")

    written = []
    for path, channel in zip(channel_paths(stem), frame.channels):
        encoded = np.clip(np.rint(channel * radiance_scale), 0, UINT16_MAX).astype(np.uint16)
        if not cv2.imwrite(str(path), encoded):
            raise OSError(f"Failed to write channel image {path}")
        written.append(path)

    meta = {
        'radiance_scale': radiance_scale,
        'angles_deg': [float(np.degrees(a)) for a in CHANNEL_ANGLES],
        'encoding': 'linear uint16',
    }
    _meta_path(stem).write_text(json.dumps(meta, indent=2))
    written.append(_meta_path(stem))
    return written


def read_channels(stem: PathLike) -> PolarFrame:
    """
    Read the four channel PNGs written by write_channels.

    Without a sidecar the stored values are taken as radiance * 65535.

    Raises:
        FileNotFoundError: Naming the expected filename pattern
        InputFileError: On non-16-bit or mismatched images
    """
    paths = channel_paths(stem)
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(
            f"Missing channel file {missing[0]}; expected {stem}_{{p000,p045,p090,p135}}.png"
        )

    radiance_scale = float(UINT16_MAX)
    meta_path = _meta_path(stem)
    if meta_path.exists():
        try:
            radiance_scale = float(json.loads(meta_path.read_text())['radiance_scale'])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise InputFileError(f"{meta_path}: unreadable radiance scale ({e})")

    channels = []
    for path in paths:
        image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if image is None:
            raise OSError(f"Failed to read channel image {path}")
        if image.dtype != np.uint16 or image.ndim != 2:
            raise InputFileError(f"{path}: expected single-channel 16-bit PNG, got {image.dtype} {image.shape}")
        channels.append(image.astype(np.float64) / radiance_scale)

    if len({c.shape for c in channels}) != 1:
        raise InputFileError(f"Channel images of {stem} differ in size")
    return PolarFrame(np.stack(channels))


def write_label_png(path: PathLike, labels: np.ndarray) -> None:
    """8-bit label image (values 0..255)."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise RejectedInputError(f"Label values must fit in 8 bits for {path}")
    Image.fromarray(labels.astype(np.uint8)).save(path)


def read_label_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image.convert('L'), dtype=np.int64)


def azimuth_color_wheel(azimuth: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """BGR visualization: hue encodes azimuth, invalid pixels are black."""
    hue = np.mod(azimuth, 2 * np.pi) / (2 * np.pi) * 180.0
    hsv = np.zeros(azimuth.shape + (3,), dtype=np.uint8)
    hsv[..., 0] = np.clip(np.floor(hue), 0, 179).astype(np.uint8)
    hsv[..., 1] = 255
    hsv[..., 2] = np.where(valid, 255, 0).astype(np.uint8)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2BGR)


def save_debug_maps(debug_dir: Optional[PathLike], name: str, cues: PolarCues) -> List[Path]:
    """
    Dump azimuth/zenith/label maps and the azimuth color wheel of one keyframe.

    Does nothing when debug_dir is None.
    """
    if debug_dir is None:
        return []
    debug_dir = Path(debug_dir)
    debug_dir.mkdir(parents=True, exist_ok=True)

    azimuth_path = debug_dir / f"{name}_azimuth.pfm"
    zenith_path = debug_dir / f"{name}_zenith.pfm"
    label_path = debug_dir / f"{name}_reflection.pfm"
    wheel_path = debug_dir / f"{name}_azimuth.png"

    write_angles(azimuth_path, cues.azimuth, cues.valid)
    write_angles(zenith_path, cues.zenith, cues.valid)
    write_pfm(label_path, np.where(cues.valid, cues.reflection.astype(np.float64), -1.0))
    if not cv2.imwrite(str(wheel_path), azimuth_color_wheel(cues.azimuth, cues.valid)):
        raise OSError(f"Failed to write debug image {wheel_path}")

    logger.debug(f"Debug maps for {name} written to {debug_dir}")
    return [azimuth_path, zenith_path, label_path, wheel_path]


class KeyframePose(BaseModel):
    model_config = ConfigDict(extra='forbid')
    name: str
    quaternion_xyzw: Tuple[float, float, float, float]
    translation: Tuple[float, float, float]


class CameraFile(BaseModel):
    model_config = ConfigDict(extra='forbid')
    f: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(ge=2)
    height: int = Field(ge=2)
    keyframes: List[KeyframePose] = Field(min_length=1)


def write_cameras(path: PathLike, cameras: Sequence[Tuple[str, CameraModel]]) -> None:
    """Camera JSON: shared intrinsics plus one pose per keyframe (camera-from-world)."""
    if not cameras:
        raise RejectedInputError("No cameras to write")
    first = cameras[0][1]
    doc = CameraFile(
        f=first.f, cx=first.cx, cy=first.cy, width=first.width, height=first.height,
        keyframes=[
            KeyframePose(
                name=name,
                quaternion_xyzw=tuple(float(v) for v in cam.quaternion_xyzw),
                translation=tuple(float(v) for v in cam.translation),
            )
            for name, cam in cameras
        ],
    )
    Path(path).write_text(doc.model_dump_json(indent=2))


def read_cameras(path: PathLike) -> List[Tuple[str, CameraModel]]:
    """
    Read a camera JSON file.

    Raises:
        FileNotFoundError: If missing
        InputFileError: If malformed or a pose is invalid
    """
    text = Path(path).read_text()
    try:
        doc = CameraFile.model_validate_json(text)
    except ValidationError as e:
        raise InputFileError(f"{path}: invalid camera file ({e.error_count()} errors): {e.errors()[0]['msg']}")
    try:
        return [
            (kf.name, CameraModel.from_quaternion(doc.f, doc.cx, doc.cy, doc.width, doc.height,
                                                  kf.quaternion_xyzw, kf.translation))
            for kf in doc.keyframes
        ]
    except InputFileError:
        raise
    except RejectedInputError as e:
        raise InputFileError(f"{path}: {e}")


def write_ply(path: PathLike, points: np.ndarray, normals: np.ndarray) -> None:
    """ASCII PLY with x y z nx ny nz per vertex."""
    vertex = np.empty(points.shape[0], dtype=[
        ('x', 'f4'), ('y', 'f4'), ('z', 'f4'),
        ('nx', 'f4'), ('ny', 'f4'), ('nz', 'f4'),
    ])
    vertex['x'], vertex['y'], vertex['z'] = points[:, 0], points[:, 1], points[:, 2]
    vertex['nx'], vertex['ny'], vertex['nz'] = normals[:, 0], normals[:, 1], normals[:, 2]
    PlyData([PlyElement.describe(vertex, 'vertex')], text=True).write(str(path))
    logger.info(f"Wrote {points.shape[0]} points to {path}")


def write_json(path: PathLike, payload: Union[BaseModel, dict, list]) -> None:
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2, by_alias=True)
    else:
        text = json.dumps(payload, indent=2, default=_json_default)
    Path(path).write_text(text)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def write_plane_csv(path: PathLike, curves: Sequence, z_range: Tuple[float, float]) -> None:
    """One row per (label, threshold) with the scene depth range for normalization."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['label', 'threshold_m', 'inlier_fraction', 'z_min', 'z_max'])
        for curve in curves:
            for threshold, fraction in zip(curve.thresholds, curve.inlier_fractions):
                writer.writerow([curve.label, f"{threshold:.6g}", f"{fraction:.6f}", z_range[0], z_range[1]])

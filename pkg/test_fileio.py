"""
Tests for on-disk formats: PFM, channel PNGs, labels, cameras, PLY and reports.
"""

import csv
import json

import cv2
import numpy as np
import pytest
from plyfile import PlyData

from core import CameraModel, DepthMap, InputFileError, RejectedInputError
from evaluate import PlaneCurve
from fileio import (
    channel_paths,
    read_angles,
    read_cameras,
    read_channels,
    read_depth,
    read_label_png,
    read_pfm,
    save_debug_maps,
    write_angles,
    write_cameras,
    write_channels,
    write_depth,
    write_json,
    write_label_png,
    write_pfm,
    write_plane_csv,
    write_ply,
)
from polarization import PolarCues, PolarFrame


def test_pfm_stores_rows_bottom_to_top(tmp_path):
    data = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = tmp_path / 'map.pfm'
    write_pfm(path, data)

    raw = path.read_bytes()
    assert raw.startswith(b'Pf\n3 2\n-1\n')
    payload = np.frombuffer(raw[len(b'Pf\n3 2\n-1\n'):], dtype='<f4')
    assert payload.tolist() == [3.0, 4.0, 5.0, 0.0, 1.0, 2.0]
    np.testing.assert_array_equal(read_pfm(path), data)


def test_pfm_reader_rejects_bad_files(tmp_path):
    color = tmp_path / 'color.pfm'
    color.write_bytes(b'PF\n1 1\n-1\n' + np.zeros(3, dtype='<f4').tobytes())
    with pytest.raises(InputFileError):
        read_pfm(color)

    short = tmp_path / 'short.pfm'
    short.write_bytes(b'Pf\n4 4\n-1\n' + np.zeros(3, dtype='<f4').tobytes())
    with pytest.raises(InputFileError):
        read_pfm(short)

    with pytest.raises(FileNotFoundError):
        read_pfm(tmp_path / 'absent.pfm')


def test_pfm_big_endian_payload(tmp_path):
    path = tmp_path / 'big.pfm'
    path.write_bytes(b'Pf\n2 1\n1.0\n' + np.array([1.5, 2.5], dtype='>f4').tobytes())
    np.testing.assert_array_equal(read_pfm(path), [[1.5, 2.5]])


def test_depth_invalid_pixels_are_zero(tmp_path):
    depth = DepthMap(np.array([[2.0, 3.0], [1.5, 2.5]]), np.array([[True, False], [False, True]]), (1.0, 4.0))
    path = tmp_path / 'depth.pfm'
    write_depth(path, depth)
    assert read_pfm(path).tolist() == [[2.0, 0.0], [0.0, 2.5]]
    loaded = read_depth(path, (1.0, 4.0))
    assert loaded.valid.tolist() == [[True, False], [False, True]]
    assert loaded.z_range == (1.0, 4.0)


def test_angle_maps_mark_invalid_with_minus_one(tmp_path):
    path = tmp_path / 'aolp.pfm'
    write_angles(path, np.array([[0.0, 1.25]]), np.array([[True, False]]))
    assert read_pfm(path).tolist() == [[0.0, -1.0]]
    values, valid = read_angles(path)
    assert valid.tolist() == [[True, False]]
    assert values[0, 1] == 0.0


def test_channels_round_trip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    frame = PolarFrame(rng.uniform(0.0, 2.0, (4, 6, 7)))
    written = write_channels(tmp_path / 'kf000', frame)
    assert [p.name for p in written] == [
        'kf000_p000.png', 'kf000_p045.png', 'kf000_p090.png', 'kf000_p135.png', 'kf000_meta.json'
    ]
    assert cv2.imread(str(written[0]), cv2.IMREAD_UNCHANGED).dtype == np.uint16

    meta = json.loads(written[-1].read_text())
    loaded = read_channels(tmp_path / 'kf000')
    assert np.max(np.abs(loaded.channels - frame.channels)) <= 0.5 / meta['radiance_scale'] + 1e-12
    assert meta['angles_deg'] == [0.0, 45.0, 90.0, 135.0]


def test_channels_without_sidecar_use_full_range(tmp_path):
    stem = tmp_path / 'cam'
    for path in channel_paths(stem):
        cv2.imwrite(str(path), np.full((3, 4), 65535, dtype=np.uint16))
    frame = read_channels(stem)
    np.testing.assert_allclose(frame.channels, 1.0)


def test_missing_channel_names_the_pattern(tmp_path):
    stem = tmp_path / 'cam'
    cv2.imwrite(str(channel_paths(stem)[0]), np.zeros((3, 4), dtype=np.uint16))
    with pytest.raises(FileNotFoundError, match=r'p000,p045,p090,p135'):
        read_channels(stem)


def test_eight_bit_channels_are_rejected(tmp_path):
    stem = tmp_path / 'cam'
    for path in channel_paths(stem):
        cv2.imwrite(str(path), np.zeros((3, 4), dtype=np.uint8))
    with pytest.raises(InputFileError):
        read_channels(stem)


def test_label_png_round_trip(tmp_path):
    labels = np.array([[0, 1, 2], [2, 1, 0]])
    path = tmp_path / 'labels.png'
    write_label_png(path, labels)
    np.testing.assert_array_equal(read_label_png(path), labels)
    with pytest.raises(RejectedInputError):
        write_label_png(path, np.array([[300]]))


def test_camera_file_round_trip(tmp_path):
    cams = [
        ('kf000', CameraModel.looking_at(80.0, 64, 48, eye=(0.0, 0.0, 0.0), target=(0.0, 0.0, 3.0))),
        ('kf001', CameraModel.looking_at(80.0, 64, 48, eye=(0.1, 0.0, 0.0), target=(0.3, 0.2, 3.0))),
    ]
    path = tmp_path / 'cameras.json'
    write_cameras(path, cams)
    loaded = read_cameras(path)
    assert [name for name, _ in loaded] == ['kf000', 'kf001']
    for (_, expected), (_, cam) in zip(cams, loaded):
        assert (cam.f, cam.cx, cam.cy, cam.width, cam.height) == \
            (expected.f, expected.cx, expected.cy, expected.width, expected.height)
        np.testing.assert_allclose(cam.rotation, expected.rotation, atol=1e-9)
        np.testing.assert_allclose(cam.translation, expected.translation, atol=1e-9)


def test_camera_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / 'cameras.json'
    path.write_text(json.dumps({
        'f': 80.0, 'cx': 31.5, 'cy': 23.5, 'width': 64, 'height': 48, 'skew': 0.0,
        'keyframes': [{'name': 'kf000', 'quaternion_xyzw': [0, 0, 0, 1], 'translation': [0, 0, 0]}],
    }))
    with pytest.raises(InputFileError):
        read_cameras(path)


def test_ply_has_points_and_normals(tmp_path):
    points = np.array([[0.0, 0.0, 1.0], [1.0, 2.0, 3.0]])
    normals = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    path = tmp_path / 'cloud.ply'
    write_ply(path, points, normals)

    assert path.read_bytes().startswith(b'ply\nformat ascii 1.0')
    vertex = PlyData.read(str(path))['vertex']
    assert vertex.count == 2
    np.testing.assert_allclose(np.column_stack([vertex['x'], vertex['y'], vertex['z']]), points)
    np.testing.assert_allclose(np.column_stack([vertex['nx'], vertex['ny'], vertex['nz']]), normals)


def test_json_and_plane_csv(tmp_path):
    write_json(tmp_path / 'stats.json', {'count': np.int64(3), 'trace': np.array([1.0, 2.0])})
    assert json.loads((tmp_path / 'stats.json').read_text()) == {'count': 3, 'trace': [1.0, 2.0]}

    curves = [PlaneCurve(label=1, point_count=10, thresholds=[0.01, 0.02], inlier_fractions=[0.5, 0.9])]
    write_plane_csv(tmp_path / 'planes.csv', curves, (1.0, 6.0))
    with open(tmp_path / 'planes.csv', newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['label', 'threshold_m', 'inlier_fraction', 'z_min', 'z_max']
    assert len(rows) == 3
    assert rows[2][:3] == ['1', '0.02', '0.900000']


def test_debug_maps(tmp_path):
    shape = (4, 5)
    cues = PolarCues(
        azimuth=np.full(shape, np.pi / 2),
        zenith=np.full(shape, 0.4),
        reflection=np.ones(shape, dtype=np.int8),
        valid=np.ones(shape, dtype=bool),
    )
    assert save_debug_maps(None, 'kf000', cues) == []
    written = save_debug_maps(tmp_path / 'debug', 'kf000', cues)
    assert all(p.exists() for p in written)
    np.testing.assert_allclose(read_pfm(tmp_path / 'debug' / 'kf000_zenith.pfm'), 0.4, rtol=1e-6)


def test_camera_file_with_zero_quaternion_is_a_file_error(tmp_path):
    path = tmp_path / 'cameras.json'
    path.write_text(json.dumps({
        'f': 80.0, 'cx': 31.5, 'cy': 23.5, 'width': 64, 'height': 48,
        'keyframes': [{'name': 'kf000', 'quaternion_xyzw': [0, 0, 0, 0], 'translation': [0, 0, 0]}],
    }))
    with pytest.raises(InputFileError, match='cameras.json'):
        read_cameras(path)

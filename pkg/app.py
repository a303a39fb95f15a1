"""
Command-line entry point for polarimetric dense depth reconstruction.

Subcommands:
    render       Render a synthetic scene into a keyframe dataset
    reconstruct  Densify sparse seeds of a dataset (or one explicit keyframe)
    evaluate     Score a reconstruction against ground truth
    pipeline     render -> reconstruct -> evaluate in one run

Every run writes manifest.json into its output directory, including failed
runs. `--replay manifest.json` repeats a recorded run with the same config.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure.
"""

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from config import (
    TOOL_VERSION,
    ConfigError,
    RunConfig,
    RunManifest,
    build_config,
    config_snapshot,
)
from core import (
    CameraModel,
    DepthMap,
    InputFileError,
    NumericalFailure,
    RejectedInputError,
    backproject,
    merge_point_clouds,
    reproject,
    viewing_rays,
)
from densify import densify_keyframe, extract_inliers
from evaluate import evaluate_reconstruction
from fileio import (
    read_cameras,
    read_channels,
    read_depth,
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
from polarization import stokes_from_channels
from prior import disambiguate, normals_from_prior
from synth import (
    SyntheticScene,
    preset_scene,
    render_scene,
    sample_sparse_seeds,
    simulate_relative_prior,
)


# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_UNEXPECTED = 1

MANIFEST_NAME = 'manifest.json'
DATASET_NAME = 'scene.json'
CAMERAS_NAME = 'cameras.json'

# Flag -> dotted config key
DENSIFY_FLAGS = {
    'consistency_frac': 'densify.consistency_frac',
    'azimuth_stop': 'densify.azimuth_stop',
    'lambda_': 'densify.lambda',
    'zeta': 'densify.zeta',
    'tv_iters': 'densify.tv_iters',
    'convergence_ratio': 'densify.convergence_ratio',
    'max_outer_iters': 'densify.max_outer_iters',
    'validation': 'densify.validation',
    'mad_window': 'densify.mad_window',
    'log_depth': 'densify.log_depth',
}
RUN_FLAGS = {
    'eta': 'eta',
    'noise_floor': 'noise_floor',
    'gmin_frac': 'gmin_frac',
    'prior_space': 'prior_space',
    'threads': 'threads',
    'voxel_size': 'voxel_size',
    'z_range': 'z_range',
    'thresholds': 'thresholds',
}
RENDER_FLAGS = {
    'scene': 'render.scene',
    'scene_file': 'render.scene_file',
    'width': 'render.width',
    'height': 'render.height',
    'focal': 'render.focal',
    'render_eta': 'render.eta',
    'channel_noise': 'render.channel_noise',
    'seed_fraction': 'render.seed_fraction',
    'seed_noise': 'render.seed_noise',
    'rng_seed': 'render.rng_seed',
    'keyframes': 'render.keyframes',
    'radiance_scale': 'render.radiance_scale',
}


class DatasetManifest(BaseModel):
    """scene.json written by `render` next to the keyframe files."""
    model_config = ConfigDict(extra='forbid')
    scene: Dict[str, Any]
    width: int
    height: int
    focal: float
    eta: float
    z_range: Tuple[float, float]
    prior_space: str
    keyframes: List[str]
    rng_seed: int
    tool_version: str = TOOL_VERSION


@dataclass
class KeyframeInputs:
    name: str
    camera: CameraModel
    channels: Path
    seeds: Path
    prior: Path
    gt_depth: Optional[Path] = None
    gt_surface: Optional[Path] = None


class RunRecorder:
    """Collects stage timings, output files and the failing stage of one run."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except Exception:
            if self.manifest.failed_stage is None:
                self.manifest.failed_stage = name
                logger.error(f"Stage '{name}' failed")
            raise
        finally:
            elapsed = time.perf_counter() - start
            self.manifest.timings[name] = round(self.manifest.timings.get(name, 0.0) + elapsed, 6)

    def output(self, path) -> None:
        self.manifest.outputs.append(str(path))


def keyframe_names(count: int) -> List[str]:
    return [f"kf{k:03d}" for k in range(count)]


def load_scene(config: RunConfig) -> SyntheticScene:
    """Scene from the config's scene file, else the named preset."""
    if config.render.scene_file:
        path = Path(config.render.scene_file)
        return SyntheticScene.model_validate_json(path.read_text())
    return preset_scene(config.render.scene)


def run_render(config: RunConfig, output_dir: Path, recorder: RunRecorder) -> Path:
    """
    Render every keyframe of the configured scene into a dataset directory.

    Per keyframe `<name>`: four channel PNGs with a metadata sidecar, ground
    truth PFMs (depth, aolp, dolp, zenith, azimuth, surface ids), a reflection
    label PNG, the sparse seeds and the simulated relative prior.

    Returns:
        The dataset directory
    """
    render = config.render
    output_dir.mkdir(parents=True, exist_ok=True)

    with recorder.stage('render:scene'):
        scene = load_scene(config)
        cameras = scene.cameras(render.width, render.height, render.focal)
        if render.keyframes is not None:
            cameras = cameras[:render.keyframes]
        names = keyframe_names(len(cameras))
        # One 64-bit seed drives noise, seed sampling and prior bias of every keyframe
        streams = np.random.SeedSequence(render.rng_seed).generate_state(3 * len(cameras), dtype=np.uint64)
        logger.info(f"Rendering {len(cameras)} keyframe(s) of a {len(scene.surfaces)}-surface scene")

    for k, (name, cam) in enumerate(zip(names, cameras)):
        noise_seed, seed_seed, prior_seed = (int(s) for s in streams[3 * k:3 * k + 3])
        with recorder.stage(f"render:{name}"):
            logger.info(f"  Rendering keyframe {name}...")
            frame, gt = render_scene(scene, cam, render.channel_noise, noise_seed, render.eta, config.threads)
            seeds = sample_sparse_seeds(gt, render.seed_fraction, render.seed_noise, seed_seed)
            prior = simulate_relative_prior(gt, render.prior_warp, render.surface_bias, prior_seed, render.bias_sigma)

            stem = output_dir / name
            for path in write_channels(stem, frame, render.radiance_scale):
                recorder.output(path)

            valid = gt.valid
            maps = {
                'gt_depth': np.where(valid, gt.depth.depth, 0.0),
                'seeds': np.where(seeds.valid, seeds.depth, 0.0),
                'prior': np.where(prior.valid, prior.depth, 0.0),
                'gt_surface': (gt.surface_id + 1).astype(np.float64),
            }
            for suffix, values in maps.items():
                path = output_dir / f"{name}_{suffix}.pfm"
                write_pfm(path, values)
                recorder.output(path)

            angles = {
                'gt_aolp': gt.aolp,
                'gt_dolp': gt.dolp,
                'gt_zenith': gt.zenith_true,
                'gt_azimuth': gt.azimuth_true,
            }
            for suffix, values in angles.items():
                path = output_dir / f"{name}_{suffix}.pfm"
                write_angles(path, values, valid)
                recorder.output(path)

            # 0 = no surface, 1 = diffuse, 2 = specular
            label_path = output_dir / f"{name}_gt_labels.png"
            write_label_png(label_path, np.where(valid, gt.reflection.astype(np.int64) + 1, 0))
            recorder.output(label_path)

    with recorder.stage('render:manifest'):
        cameras_path = output_dir / CAMERAS_NAME
        write_cameras(cameras_path, list(zip(names, cameras)))
        dataset = DatasetManifest(
            scene=scene.model_dump(mode='json'),
            width=render.width,
            height=render.height,
            focal=render.focal,
            eta=render.eta if render.eta is not None else scene.eta,
            z_range=scene.z_range,
            prior_space=render.prior_warp.prior_space,
            keyframes=names,
            rng_seed=render.rng_seed,
        )
        dataset_path = output_dir / DATASET_NAME
        write_json(dataset_path, dataset)
        recorder.output(cameras_path)
        recorder.output(dataset_path)

    logger.info(f"Dataset written to {output_dir}")
    return output_dir


def load_dataset(dataset_dir: Path) -> Tuple[DatasetManifest, List[KeyframeInputs]]:
    """
    Read a rendered dataset directory.

    Raises:
        FileNotFoundError: If scene.json or cameras.json is missing
        InputFileError: If they are malformed or disagree
    """
    manifest_path = dataset_dir / DATASET_NAME
    try:
        dataset = DatasetManifest.model_validate_json(manifest_path.read_text())
    except ValidationError as e:
        raise InputFileError(f"{manifest_path}: malformed dataset manifest: {e.errors()[0]['msg']}")

    cameras = dict(read_cameras(dataset_dir / CAMERAS_NAME))
    keyframes = []
    for name in dataset.keyframes:
        if name not in cameras:
            raise InputFileError(f"{dataset_dir / CAMERAS_NAME} has no pose for keyframe {name}")
        gt_depth = dataset_dir / f"{name}_gt_depth.pfm"
        gt_surface = dataset_dir / f"{name}_gt_surface.pfm"
        keyframes.append(KeyframeInputs(
            name=name,
            camera=cameras[name],
            channels=dataset_dir / name,
            seeds=dataset_dir / f"{name}_seeds.pfm",
            prior=dataset_dir / f"{name}_prior.pfm",
            gt_depth=gt_depth if gt_depth.exists() else None,
            gt_surface=gt_surface if gt_surface.exists() else None,
        ))
    return dataset, keyframes


def keyframe_normals(field_normals: np.ndarray, field_valid: np.ndarray, cam: CameraModel, pixels: np.ndarray) -> np.ndarray:
    """Prior normals at the given pixels in world coordinates (viewing ray where the prior has none)."""
    normals = np.where(field_valid[..., None], field_normals, viewing_rays(cam)).reshape(-1, 3)[pixels]
    return normals @ cam.rotation


def reconstruct_keyframe(
    kf: KeyframeInputs,
    z_range: Tuple[float, float],
    prior_space: str,
    config: RunConfig,
    output_dir: Path,
    recorder: RunRecorder,
    previous: Optional[Tuple[DepthMap, CameraModel]] = None,
    debug_dir: Optional[Path] = None
) -> Tuple[DepthMap, Tuple[np.ndarray, np.ndarray]]:
    """
    Densify one keyframe and write its depth, provenance and stats.

    The first keyframe uses its seeds as they are and validates new depths
    against their neighborhood median; later keyframes keep only the seeds
    that agree with the previous dense result, which also serves as the
    two-view validation reference.

    Returns:
        (dense depth, world-frame (points, normals))
    """
    cam = kf.camera
    cfg = config.densify

    with recorder.stage(f"reconstruct:{kf.name}:load"):
        logger.info(f"Step 1: Loading keyframe {kf.name}...")
        frame = read_channels(kf.channels)
        seeds = read_depth(kf.seeds, z_range)
        prior = DepthMap.from_array(read_pfm(kf.prior))
        gt = read_depth(kf.gt_depth, z_range) if kf.gt_depth else None
        for label, shape in (('channels', frame.shape), ('seeds', seeds.shape), ('prior', prior.shape)):
            if tuple(shape) != cam.shape:
                raise InputFileError(f"Keyframe {kf.name}: {label} {tuple(shape)} do not match camera {cam.shape}")
        logger.info(f"Loaded {seeds.count} seeds, prior in {prior_space} space")

    with recorder.stage(f"reconstruct:{kf.name}:cues"):
        logger.info("Step 2: Computing polarization measurement...")
        meas = stokes_from_channels(frame, config.noise_floor)
        logger.info(f"{int(meas.valid.sum())} pixels above the noise floor")

        logger.info("Step 3: Deriving prior normals...")
        field = normals_from_prior(prior, cam, prior_space, config.gmin_frac)

        logger.info("Step 4: Disambiguating polarimetric cues...")
        cues = disambiguate(meas, field, config.eta)
        for path in save_debug_maps(debug_dir, kf.name, cues):
            recorder.output(path)

    with recorder.stage(f"reconstruct:{kf.name}:inliers"):
        logger.info("Step 5: Selecting seed inliers...")
        reference = None
        if previous is None:
            logger.info("First keyframe: seeds used unfiltered, median validation")
        else:
            prev_depth, prev_cam = previous
            seeds = extract_inliers(seeds, prev_depth, cam, prev_cam, cfg)
            if cfg.validation == 'two_view':
                reference = reproject(prev_depth, prev_cam, cam, z_range=z_range)

    with recorder.stage(f"reconstruct:{kf.name}:densify"):
        logger.info("Step 6: Densifying...")
        dense, stats = densify_keyframe(
            seeds, cues, field, frame.mean_intensity(), cfg,
            reference=reference, gt=gt, threads=config.threads,
        )
        logger.info(f"Keyframe {kf.name}: {seeds.count} seeds -> {dense.count} depths")

    with recorder.stage(f"reconstruct:{kf.name}:write"):
        logger.info("Step 7: Writing keyframe outputs...")
        depth_path = output_dir / f"{kf.name}_depth.pfm"
        provenance_path = output_dir / f"{kf.name}_provenance.png"
        stats_path = output_dir / f"{kf.name}_stats.json"
        write_depth(depth_path, dense)
        write_label_png(provenance_path, stats.provenance)
        write_json(stats_path, {
            'keyframe': kf.name,
            'seeds': seeds.count,
            'final_count': dense.count,
            'converged': stats.converged,
            'iterations': stats.iterations,
        })
        for path in (depth_path, provenance_path, stats_path):
            recorder.output(path)

    points, pixels = backproject(dense, cam, return_pixels=True)
    cloud = (cam.to_world(points), keyframe_normals(field.normals.normals, field.normals.valid, cam, pixels))
    return dense, cloud


def run_reconstruct(
    config: RunConfig,
    inputs: Dict[str, Optional[str]],
    output_dir: Path,
    recorder: RunRecorder
) -> Path:
    """
    Reconstruct a rendered dataset or a single explicit keyframe.

    Returns:
        The reconstruction directory
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    debug_dir = Path(inputs['debug_dir']) if inputs.get('debug_dir') else None

    with recorder.stage('reconstruct:inputs'):
        if inputs.get('dataset'):
            dataset, keyframes = load_dataset(Path(inputs['dataset']))
            z_range = config.z_range or dataset.z_range
            prior_space = config.prior_space or dataset.prior_space
        else:
            missing = [key for key in ('channels', 'seeds', 'prior', 'camera') if not inputs.get(key)]
            if missing:
                raise ConfigError(f"reconstruct needs --dataset or all of --channels/--seeds/--prior/--camera (missing {missing})")
            name, cam = read_cameras(inputs['camera'])[0]
            keyframes = [KeyframeInputs(
                name=name,
                camera=cam,
                channels=Path(inputs['channels']),
                seeds=Path(inputs['seeds']),
                prior=Path(inputs['prior']),
                gt_depth=Path(inputs['gt']) if inputs.get('gt') else None,
            )]
            z_range = config.z_range or DepthMap.from_array(read_pfm(inputs['seeds'])).z_range
            prior_space = config.prior_space or 'disparity'
        logger.info(f"Reconstructing {len(keyframes)} keyframe(s), depth range {z_range}")

    previous = None
    clouds = []
    for kf in keyframes:
        dense, cloud = reconstruct_keyframe(kf, z_range, prior_space, config, output_dir, recorder, previous, debug_dir)
        previous = (dense, kf.camera)
        clouds.append(cloud)

    with recorder.stage('reconstruct:merge'):
        logger.info("Merging keyframe clouds...")
        points, normals = merge_point_clouds(clouds, config.voxel_size)
        ply_path = output_dir / 'cloud.ply'
        write_ply(ply_path, points, normals)
        recorder.output(ply_path)

    return output_dir


def run_evaluate(
    config: RunConfig,
    inputs: Dict[str, Optional[str]],
    output_dir: Path,
    recorder: RunRecorder
) -> List[Path]:
    """
    Score reconstructed keyframes: AbsRel against ground-truth depth and
    plane-fit curves per ground-truth surface.

    Returns:
        Written report paths
    """
    output_dir.mkdir(parents=True, exist_ok=True)

    with recorder.stage('evaluate:inputs'):
        if inputs.get('dataset') and inputs.get('reconstruction'):
            dataset, keyframes = load_dataset(Path(inputs['dataset']))
            recon_dir = Path(inputs['reconstruction'])
            z_range = config.z_range or dataset.z_range
            jobs = [
                (kf.name, kf.camera, recon_dir / f"{kf.name}_depth.pfm", kf.gt_depth, kf.gt_surface,
                 recon_dir / f"{kf.name}_stats.json")
                for kf in keyframes
            ]
        elif inputs.get('depth') and inputs.get('camera'):
            name, cam = read_cameras(inputs['camera'])[0]
            z_range = config.z_range or DepthMap.from_array(read_pfm(inputs['depth'])).z_range
            gt_path = Path(inputs['gt']) if inputs.get('gt') else None
            labels_path = Path(inputs['labels']) if inputs.get('labels') else None
            stats_path = Path(inputs['stats']) if inputs.get('stats') else None
            jobs = [(name, cam, Path(inputs['depth']), gt_path, labels_path, stats_path)]
        else:
            raise ConfigError("evaluate needs --dataset with --reconstruction, or --depth with --camera")

    written = []
    for name, cam, depth_path, gt_path, labels_path, stats_path in jobs:
        with recorder.stage(f"evaluate:{name}"):
            logger.info(f"Evaluating keyframe {name}...")
            depth = read_depth(depth_path, z_range)
            gt = read_depth(gt_path, z_range) if gt_path else None
            # Label maps store label + 1 with 0 meaning unlabeled
            labels = np.rint(read_pfm(labels_path)).astype(np.int64) - 1 if labels_path else None
            trace = None
            if stats_path is not None and stats_path.exists():
                iterations = json.loads(stats_path.read_text())['iterations']
                trace = [(r['iteration'], r['total'], r.get('absrel')) for r in iterations]

            thresholds = config.thresholds or [frac * (z_range[1] - z_range[0]) for frac in config.threshold_fracs]
            report = evaluate_reconstruction(depth, cam, gt, labels, thresholds, trace)
            if report.absrel is not None:
                logger.info(f"Keyframe {name}: AbsRel {report.absrel:.4f} over {report.valid_count} depths")

            report_path = output_dir / f"{name}_report.json"
            write_json(report_path, report)
            recorder.output(report_path)
            written.append(report_path)
            if report.plane_curves:
                csv_path = output_dir / f"{name}_planes.csv"
                write_plane_csv(csv_path, report.plane_curves, z_range)
                recorder.output(csv_path)
                written.append(csv_path)
    return written


def execute(
    command: str,
    config: RunConfig,
    inputs: Dict[str, Optional[str]],
    output_dir: Path,
    recorder: RunRecorder
) -> None:
    """Dispatch one recorded command; shared by fresh runs and replays."""
    if command == 'render':
        run_render(config, output_dir, recorder)
    elif command == 'reconstruct':
        run_reconstruct(config, inputs, output_dir, recorder)
    elif command == 'evaluate':
        run_evaluate(config, inputs, output_dir, recorder)
    elif command == 'pipeline':
        # Render -> reconstruct -> evaluate, each into its own subdirectory
        dataset_dir = run_render(config, output_dir / 'dataset', recorder)
        recon_dir = run_reconstruct(
            config, {**inputs, 'dataset': str(dataset_dir)}, output_dir / 'reconstruction', recorder
        )
        run_evaluate(
            config, {'dataset': str(dataset_dir), 'reconstruction': str(recon_dir)},
            output_dir / 'evaluation', recorder,
        )
    else:
        raise ConfigError(f"Unknown command '{command}'")


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config overrides for every flag given on the command line."""
    overrides = {}
    for table in (RUN_FLAGS, DENSIFY_FLAGS, RENDER_FLAGS):
        for attr, key in table.items():
            value = getattr(args, attr, None)
            if value is not None:
                overrides[key] = list(value) if isinstance(value, (list, tuple)) else value
    return overrides


def collect_inputs(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    keys = ('dataset', 'reconstruction', 'channels', 'seeds', 'prior', 'camera', 'gt', 'depth', 'labels', 'stats', 'debug_dir')
    return {key: str(getattr(args, key)) for key in keys if getattr(args, key, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='JSON config file (flags override its values)')
    common.add_argument('--output', '-o', type=Path, default=argparse.SUPPRESS, help='Output directory')
    common.add_argument('--threads', type=int, help='Worker threads, 0 = one per CPU')
    common.add_argument('--verbose', '-v', action='store_true', default=argparse.SUPPRESS, help='Debug logging')
    common.add_argument('--z-range', dest='z_range', type=float, nargs=2, metavar=('ZMIN', 'ZMAX'),
                        help='Depth range in meters (datasets carry their own)')

    recon = argparse.ArgumentParser(add_help=False)
    recon.add_argument('--eta', type=float, help='Refractive index used for zenith inversion')
    recon.add_argument('--noise-floor', dest='noise_floor', type=float)
    recon.add_argument('--gmin-frac', dest='gmin_frac', type=float)
    recon.add_argument('--prior-space', dest='prior_space', choices=['depth', 'disparity'])
    recon.add_argument('--voxel-size', dest='voxel_size', type=float)
    recon.add_argument('--debug-dir', dest='debug_dir', type=Path, help='Write per-keyframe cue maps here')
    recon.add_argument('--consistency-frac', dest='consistency_frac', type=float)
    recon.add_argument('--azimuth-stop', dest='azimuth_stop', type=float)
    recon.add_argument('--lambda', dest='lambda_', type=float)
    recon.add_argument('--zeta', type=float)
    recon.add_argument('--tv-iters', dest='tv_iters', type=int)
    recon.add_argument('--convergence-ratio', dest='convergence_ratio', type=float)
    recon.add_argument('--max-outer-iters', dest='max_outer_iters', type=int)
    recon.add_argument('--validation', choices=['two_view', 'mad'])
    recon.add_argument('--mad-window', dest='mad_window', type=int)
    recon.add_argument('--log-depth', dest='log_depth', action='store_const', const=True)

    render = argparse.ArgumentParser(add_help=False)
    render.add_argument('--scene', help='Preset scene name')
    render.add_argument('--scene-file', dest='scene_file', help='Scene description JSON')
    render.add_argument('--width', type=int)
    render.add_argument('--height', type=int)
    render.add_argument('--focal', type=float)
    render.add_argument('--render-eta', dest='render_eta', type=float, help='Refractive index of the rendered scene')
    render.add_argument('--channel-noise', dest='channel_noise', type=float)
    render.add_argument('--seed-fraction', dest='seed_fraction', type=float)
    render.add_argument('--seed-noise', dest='seed_noise', type=float)
    render.add_argument('--rng-seed', dest='rng_seed', type=int)
    render.add_argument('--keyframes', type=int, help='Render only the first N keyframes')
    render.add_argument('--radiance-scale', dest='radiance_scale', type=float)

    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument('--thresholds', type=float, nargs='+', help='Plane-curve thresholds in meters')

    parser = argparse.ArgumentParser(description='Polarimetric dense depth reconstruction')
    parser.add_argument('--replay', type=Path, help='Re-run the run recorded in this manifest')
    parser.add_argument('--output', '-o', type=Path, help='Output directory for --replay')
    parser.add_argument('--verbose', '-v', action='store_true')
    sub = parser.add_subparsers(dest='command')

    sub.add_parser('render', parents=[common, render], help='Render a synthetic dataset')

    p = sub.add_parser('reconstruct', parents=[common, recon], help='Densify seeds')
    p.add_argument('--dataset', type=Path, help='Rendered dataset directory')
    p.add_argument('--channels', type=Path, help='Channel file stem (<stem>_p000.png ...)')
    p.add_argument('--seeds', type=Path, help='Seed depth PFM')
    p.add_argument('--prior', type=Path, help='Relative prior PFM')
    p.add_argument('--camera', type=Path, help='Camera JSON')
    p.add_argument('--gt', type=Path, help='Ground-truth depth PFM for the AbsRel trace')

    p = sub.add_parser('evaluate', parents=[common, evaluation], help='Evaluate a reconstruction')
    p.add_argument('--dataset', type=Path)
    p.add_argument('--reconstruction', type=Path)
    p.add_argument('--depth', type=Path)
    p.add_argument('--camera', type=Path)
    p.add_argument('--gt', type=Path)
    p.add_argument('--labels', type=Path, help='Plane label PFM (label + 1, 0 = unlabeled)')
    p.add_argument('--stats', type=Path)

    sub.add_parser('pipeline', parents=[common, recon, render, evaluation], help='Render, reconstruct and evaluate')
    return parser


def write_manifest(manifest: RunManifest, output_dir: Optional[Path]) -> None:
    if output_dir is None:
        logger.warning("No output directory; manifest not written")
        return
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_json(output_dir / MANIFEST_NAME, manifest)
        logger.info(f"Manifest written to {output_dir / MANIFEST_NAME}")
    except OSError as e:
        logger.error(f"Could not write manifest: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Returns:
        Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.replay is None and args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    manifest = RunManifest(command=args.command or 'pipeline', config={})
    recorder = RunRecorder(manifest)
    output_dir = args.output

    try:
        with recorder.stage('config'):
            if args.replay is not None:
                logger.info(f"Replaying {args.replay}")
                try:
                    recorded = RunManifest.model_validate_json(Path(args.replay).read_text())
                except ValidationError as e:
                    raise ConfigError(f"{args.replay}: not a run manifest: {e.errors()[0]['msg']}")
                config = build_config(base=recorded.config)
                inputs = dict(recorded.inputs)
                manifest.command = recorded.command
                if output_dir is None and recorded.output_dir:
                    output_dir = Path(recorded.output_dir)
            else:
                config = build_config(args.config, collect_overrides(args))
                inputs = collect_inputs(args)

            if output_dir is None:
                raise ConfigError("An output directory is required (--output)")
            manifest.config = config_snapshot(config)
            manifest.inputs = inputs
            manifest.output_dir = str(output_dir)
            manifest.rng_seed = config.render.rng_seed

        logger.info(f"Running '{manifest.command}' into {output_dir}")
        execute(manifest.command, config, inputs, Path(output_dir), recorder)
        manifest.status = 'ok'
        manifest.exit_code = EXIT_OK
        logger.info(f"Done: {len(manifest.outputs)} file(s) written")

    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        manifest.status, manifest.exit_code, manifest.error = 'failed', EXIT_CONFIG, str(e)
    except (OSError, InputFileError) as e:
        logger.error(f"I/O error: {e}")
        manifest.status, manifest.exit_code, manifest.error = 'failed', EXIT_IO, str(e)
    # EmptySeedsError is also a RejectedInputError; it must land here first
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {e}")
        manifest.status, manifest.exit_code, manifest.error = 'failed', EXIT_NUMERICAL, str(e)
    except RejectedInputError as e:
        logger.error(f"Rejected input: {e}")
        manifest.status, manifest.exit_code, manifest.error = 'failed', EXIT_CONFIG, str(e)
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        manifest.status, manifest.exit_code, manifest.error = 'failed', EXIT_UNEXPECTED, str(e)
    finally:
        write_manifest(manifest, Path(output_dir) if output_dir is not None else None)

    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())

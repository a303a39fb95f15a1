"""
Run configuration and manifests.

Everything a run needs is carried by pydantic models so that values are
validated on load and an invalid key is reported by its dotted path
(e.g. ``densify.lambda``). Config files are JSON; command-line flags are
applied on top as dotted overrides.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core import PipelineError
from synth import PriorWarp


logger = logging.getLogger(__name__)

TOOL_VERSION = '0.1.0'


class ConfigError(PipelineError):
    """Configuration could not be read or failed validation."""


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', populate_by_name=True)


class DensifyConfig(StrictModel):
    consistency_frac: float = Field(0.01, gt=0)
    azimuth_stop: float = Field(math.pi / 6, gt=0)
    lambda_: float = Field(0.3, ge=0, alias='lambda')
    zeta: float = Field(3.0, ge=0)
    tv_iters: int = Field(3, gt=0)
    convergence_ratio: float = Field(0.1, gt=0, lt=1)
    max_outer_iters: int = Field(20, gt=0)
    validation: Literal['two_view', 'mad'] = 'two_view'
    mad_window: int = Field(5, ge=3)
    log_depth: bool = False

    @field_validator('mad_window')
    @classmethod
    def check_odd(cls, v):
        if v % 2 == 0:
            raise ValueError('mad_window must be odd')
        return v


class RenderConfig(StrictModel):
    scene: str = 'two_plane'
    scene_file: Optional[str] = None
    width: int = Field(160, ge=2)
    height: int = Field(120, ge=2)
    focal: float = Field(150.0, gt=0)
    eta: Optional[float] = Field(None, ge=1.3, le=1.8)
    channel_noise: float = Field(0.0, ge=0)
    seed_fraction: float = Field(0.01, gt=0, le=1)
    seed_noise: float = Field(0.0, ge=0)
    prior_warp: PriorWarp = PriorWarp()
    surface_bias: Dict[int, float] = Field(default_factory=dict)
    bias_sigma: float = Field(0.0, ge=0)
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    radiance_scale: Optional[float] = Field(None, gt=0)
    keyframes: Optional[int] = Field(None, ge=1)


class RunConfig(StrictModel):
    eta: float = Field(1.5, ge=1.3, le=1.8)
    noise_floor: Optional[float] = Field(None, ge=0)
    gmin_frac: float = Field(1e-4, gt=0)
    prior_space: Optional[Literal['depth', 'disparity']] = None
    threads: int = Field(0, ge=0)
    thresholds: Optional[List[float]] = None
    threshold_fracs: List[float] = Field(default_factory=lambda: [0.0025, 0.005, 0.01, 0.02, 0.04])
    voxel_size: float = Field(0.01, gt=0)
    z_range: Optional[Tuple[float, float]] = None
    densify: DensifyConfig = DensifyConfig()
    render: RenderConfig = RenderConfig()

    @field_validator('thresholds', 'threshold_fracs')
    @classmethod
    def check_thresholds(cls, v):
        if v is not None and (not v or min(v) <= 0):
            raise ValueError('thresholds must be a non-empty list of positive values')
        return sorted(v) if v is not None else v

    @field_validator('z_range')
    @classmethod
    def check_range(cls, v):
        if v is not None and not (0 < v[0] < v[1]):
            raise ValueError('z_range must satisfy 0 < z_min < z_max')
        return v


class RunManifest(StrictModel):
    command: Literal['render', 'reconstruct', 'evaluate', 'pipeline']
    config: Dict[str, Any]
    inputs: Dict[str, Optional[str]] = Field(default_factory=dict)
    output_dir: Optional[str] = None
    outputs: List[str] = Field(default_factory=list)
    rng_seed: int = 0
    tool_version: str = TOOL_VERSION
    timings: Dict[str, float] = Field(default_factory=dict)
    status: Literal['ok', 'failed', 'running'] = 'running'
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    exit_code: Optional[int] = None


def describe_validation_error(exc: ValidationError, prefix: str = '') -> str:
    """One line per error, each naming the dotted key that failed."""
    lines = []
    for error in exc.errors():
        key = '.'.join(str(part) for part in error['loc'])
        if prefix:
            key = f"{prefix}.{key}" if key else prefix
        lines.append(f"{key}: {error['msg']}")
    return '; '.join(lines)


def set_dotted(data: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Set data['a']['b'] for 'a.b', creating nested dicts as needed."""
    parts = dotted_key.split('.')
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted_key}: '{part}' is not a section")
    node[parts[-1]] = value


def build_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    base: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Resolve the run configuration.

    Values come from `base` (e.g. a replayed snapshot), then the JSON file at
    `path`, then the dotted `overrides`; later sources win.

    Raises:
        ConfigError: On unreadable JSON or failed validation, naming the key
    """
    data: Dict[str, Any] = json.loads(json.dumps(base)) if base else {}

    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        _merge(data, loaded)

    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e))

    logger.debug(f"Resolved config: {config.model_dump(by_alias=True)}")
    return config


def _merge(into: Dict[str, Any], update: Dict[str, Any]) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(into.get(key), dict):
            _merge(into[key], value)
        else:
            into[key] = value


def config_snapshot(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode='json', by_alias=True)

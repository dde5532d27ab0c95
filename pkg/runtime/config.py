"""
Run configuration: one typed dataclass per pipeline section.

The file is YAML (JSON parses through the same loader). Sections map onto the
config types owned by each module; unknown keys are rejected and missing keys
take the dataclass defaults. The fully materialized result is echoed as
run_config.json next to every stage's outputs, and loading that echo
reproduces the run.
"""

import json
import logging
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from analysis.cluster import ClusterConfig
from analysis.featspace import FeatureConfig
from curation.ingest import CohortCriteria
from curation.resample import ResampleConfig
from curation.track import TrackingConfig
from evaluation.protocol import EvalConfig
from models.boost import GbdtConfig
from models.tgat import TrainConfig
from synthgen.generator import SynthConfig
from trajcore.errors import ConfigError, TrajectoryEngineError
from trajcore.types import ResponseCriteria

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = "1.0"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "pipeline.yaml"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: Optional[int] = None  # None = available parallelism
    output_dir: str = "out"
    response: ResponseCriteria = field(default_factory=ResponseCriteria)
    cohort: CohortCriteria = field(default_factory=CohortCriteria)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    boost: GbdtConfig = field(default_factory=GbdtConfig)
    gat: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SCALARS = ("seed", "threads", "output_dir")
_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.name not in _SCALARS}


def _build_section(name: str, values: Any):
    cls = _SECTIONS[name]
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a mapping", type(values).__name__)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{name}'", ", ".join(unknown))
    try:
        return cls(**values)
    except TrajectoryEngineError as e:
        raise ConfigError(f"invalid section '{name}': {e.message}", e.context)
    except TypeError as e:
        raise ConfigError(f"invalid section '{name}'", str(e))


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys at every level."""
    data = dict(data or {})
    version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if str(version).split(".")[0] != CONFIG_SCHEMA_VERSION.split(".")[0]:
        raise ConfigError("unsupported config schema version",
                          f"{version} (expected {CONFIG_SCHEMA_VERSION})")
    unknown = sorted(set(data) - set(_SCALARS) - set(_SECTIONS))
    if unknown:
        raise ConfigError("unknown top-level key(s)", ", ".join(unknown))

    kwargs: Dict[str, Any] = {name: _build_section(name, data.get(name)) for name in _SECTIONS}
    for name in _SCALARS:
        if name in data:
            kwargs[name] = data[name]
    cfg = RunConfig(**kwargs)
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer", repr(cfg.seed))
    if cfg.threads is not None and (not isinstance(cfg.threads, int) or cfg.threads < 1):
        raise ConfigError("threads must be a positive integer or null", repr(cfg.threads))
    return cfg


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Load a YAML or JSON run configuration.

    Args:
        path: Config file; None gives the built-in defaults

    Returns:
        RunConfig with every default materialized
    """
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError("unreadable configuration file", f"{path}: {e}")
    if data is not None and not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping", str(path))
    logger.debug("loaded configuration from %s", path)
    return config_from_dict(data)


def _plain(value: Any) -> Any:
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    data = _plain(cfg)
    data["schema_version"] = CONFIG_SCHEMA_VERSION
    return data


def write_config(cfg: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Echo the materialized configuration as run_config.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_config.json"
    path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def with_overrides(cfg: RunConfig, seed: Optional[int] = None, threads: Optional[int] = None,
                   output_dir: Optional[str] = None) -> RunConfig:
    """Apply command-line / environment overrides to the scalar settings."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if threads is not None:
        if threads < 1:
            raise ConfigError("threads must be >= 1", str(threads))
        changes["threads"] = threads
    if output_dir is not None:
        changes["output_dir"] = output_dir
    return replace(cfg, **changes) if changes else cfg

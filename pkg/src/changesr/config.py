"""File-backed experiment configuration with strict schema validation.

One JSON file per experiment. Sections mirror the library config dataclasses
(sigma, denoiser, degradation, train) plus data-generation settings; unknown
keys anywhere are rejected before any work starts. CLI flags override config
keys (flag > file > default).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datagen import DegradationConfig
from .denoiser import DenoiserConfig
from .edm import SigmaParams
from .training import TrainConfig

OUT_ROOT_ENV = "CHANGESR_OUT_ROOT"

DEGRADATION_PRESETS = {
    "full": DegradationConfig.full,
    "simple": DegradationConfig.simple,
    "bicubic": DegradationConfig.bicubic_only,
}


class ConfigError(ValueError):
    """Configuration file or flag set is invalid."""


@dataclass(frozen=True)
class DataConfig:
    """Dataset source: a real {hr,ref,mask} tree, or synthetic generation."""

    root: str = None
    size: int = 64
    num_patches: int = 8
    num_train: int = 128
    num_val: int = 48
    change_rate: float = 0.5
    num_classes: int = 7

    def __post_init__(self):
        if not 0.0 <= self.change_rate <= 1.0:
            raise ConfigError(f"change_rate must be in [0, 1], got {self.change_rate}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment end to end."""

    seed: int = 0
    out_dir: str = None
    scale: int = 8
    degradation_preset: str = "full"
    feature_dim: int = 16
    data: DataConfig = field(default_factory=DataConfig)
    sigma: SigmaParams = field(default_factory=SigmaParams)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    degradation: dict = field(default_factory=dict)  # field overrides on the preset
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.degradation_preset not in DEGRADATION_PRESETS:
            raise ConfigError(
                f"degradation_preset must be one of {sorted(DEGRADATION_PRESETS)}, "
                f"got {self.degradation_preset!r}"
            )

    def degradation_config(self) -> DegradationConfig:
        base = DEGRADATION_PRESETS[self.degradation_preset](self.scale)
        if self.degradation:
            base = replace(base, **{k: _tuplify(v) for k, v in self.degradation.items()})
        return base.with_scale(self.scale)

    def model_config(self) -> DenoiserConfig:
        cfg = replace(self.denoiser, num_change_classes=self.data.num_classes)
        return self.train.apply_switches(cfg)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        ).hexdigest()


def _tuplify(value):
    return tuple(value) if isinstance(value, list) else value


def _build_section(cls, data: dict, where: str):
    legal = {f.name for f in fields(cls)}
    unknown = set(data) - legal
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; legal: {sorted(legal)}")
    kwargs = {k: _tuplify(v) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a plain dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {
        "data": DataConfig,
        "sigma": SigmaParams,
        "denoiser": DenoiserConfig,
        "train": TrainConfig,
    }
    top_legal = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - top_legal
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}; legal: {sorted(top_legal)}")
    kwargs = {}
    for key, value in raw.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build_section(sections[key], value, f"section {key!r}")
        elif key == "degradation":
            if not isinstance(value, dict):
                raise ConfigError("section 'degradation' must be an object")
            legal = {f.name for f in fields(DegradationConfig)}
            bad = set(value) - legal
            if bad:
                raise ConfigError(f"unknown key(s) {sorted(bad)} in section 'degradation'")
            kwargs[key] = value
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def resolve_out_dir(out_dir: str, default_name: str) -> Path:
    """Resolve the output directory against $CHANGESR_OUT_ROOT when relative."""
    root = Path(os.environ.get(OUT_ROOT_ENV, "."))
    out = Path(out_dir) if out_dir else Path(default_name)
    return out if out.is_absolute() else root / out


def write_run_record(out_dir: Path, command: str, argv, config: ExperimentConfig):
    """Provenance record sufficient to re-execute the run bit-identically."""
    from . import __version__

    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True))
    return record

"""Experiment configuration: dataclasses, YAML loading, dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .schedule import StageSchedule


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


@dataclass
class ModelConfig:
    input_size: int = 112
    latent_dim: int = 512
    encoder_widths: tuple[int, ...] = (64, 128, 256, 512)
    encoder_blocks_per_stage: int = 2
    stem_downsample: int = 4
    base_resolution: int = 7
    decoder_base_channels: int = 512
    decoder_min_channels: int = 16
    latent_disc_hidden: int = 256
    latent_disc_layers: int = 3
    seed: int = 0


@dataclass
class TrainConfig:
    lambda_recon: float = 10.0
    adv_weight: float = 1.0
    learning_rate: float = 1e-3
    adam_beta0: float = 0.0
    adam_beta1: float = 0.999
    batch_size: int = 16
    steps_per_stage: int | tuple[int, ...] = 1000
    fade_fraction: float = 0.5
    freeze_backbone: bool = True
    grad_clip: float | None = None
    checkpoint_every: int = 1000
    seed: int = 0


@dataclass
class AblationFlags:
    disable_latent_discriminator: bool = False
    reconstruction_only: bool = False
    disable_progressive: bool = False


@dataclass
class ExperimentConfig:
    manifest: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    @property
    def target_resolution(self) -> int:
        """Decoder output size: 2x the crop, or the crop itself when the
        expansion task is replaced by plain reconstruction."""
        if self.ablation.reconstruction_only:
            return self.model.input_size
        return 2 * self.model.input_size

    def num_stages(self) -> int:
        ratio = self.target_resolution // self.model.base_resolution
        if (
            ratio < 1
            or self.model.base_resolution * ratio != self.target_resolution
            or ratio & (ratio - 1) != 0
        ):
            raise ConfigError(
                f"target resolution {self.target_resolution} must be "
                f"base_resolution ({self.model.base_resolution}) times a power of 2"
            )
        return ratio.bit_length()

    def schedule(self) -> StageSchedule:
        n = self.num_stages()
        steps = self.train.steps_per_stage
        per_stage = (steps,) * n if isinstance(steps, int) else tuple(steps)
        if len(per_stage) != n:
            raise ConfigError(
                f"steps_per_stage has {len(per_stage)} entries but the "
                f"schedule has {n} stages"
            )
        return StageSchedule(
            base_resolution=self.model.base_resolution,
            num_stages=n,
            steps_per_stage=per_stage,
            fade_fraction=self.train.fade_fraction,
        )

    def validate(self) -> None:
        m, t = self.model, self.train
        if t.lambda_recon <= 0:
            raise ConfigError("lambda_recon must be strictly positive")
        if t.learning_rate <= 0:
            raise ConfigError("learning_rate must be strictly positive")
        if t.adv_weight < 0:
            raise ConfigError("adv_weight must be >= 0")
        for name in ("adam_beta0", "adam_beta1"):
            beta = getattr(t, name)
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if t.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < t.fade_fraction <= 1.0:
            raise ConfigError("fade_fraction must lie in (0, 1]")
        if t.grad_clip is not None and t.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        if t.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if m.input_size < m.base_resolution:
            raise ConfigError("input_size must be >= base_resolution")
        if m.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if len(m.encoder_widths) != 4:
            raise ConfigError("encoder_widths must name 4 backbone blocks")
        if m.stem_downsample not in (1, 2, 4):
            raise ConfigError("stem_downsample must be one of 1, 2, 4")
        if m.seed < 0 or t.seed < 0:
            raise ConfigError("seeds must be non-negative")
        self.schedule()  # raises ConfigError on a malformed stage plan

    def to_dict(self) -> dict[str, Any]:
        return _as_plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        cfg = cls(
            manifest=_take(data, "manifest", ""),
            model=_build(ModelConfig, data.get("model", {}), "model"),
            train=_build(TrainConfig, data.get("train", {}), "train"),
            ablation=_build(AblationFlags, data.get("ablation", {}), "ablation"),
        )
        known = {"manifest", "model", "train", "ablation"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cfg

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _take(data: dict, key: str, default: Any) -> Any:
    value = data.get(key, default)
    if key == "manifest" and not isinstance(value, str):
        raise ConfigError("manifest must be a path string")
    return value


def _build(cls: type, section: Any, name: str) -> Any:
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    valid = {f.name for f in fields(cls)}
    unknown = set(section) - valid
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    kwargs = dict(section)
    for f in fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from exc


def _as_plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _as_plain(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_as_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_as_plain(v) for v in obj]
    return obj


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``section.key=value`` strings to a raw config mapping.

    Values are parsed as YAML scalars, so ``true``, ``0.5`` and ``[1, 2]``
    all do what they look like. Unknown keys are rejected later by
    ``ExperimentConfig.from_dict``.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value '{raw}': {exc}") from exc
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a scalar")
        node[parts[-1]] = value
    return data


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load, override, and validate an experiment config from a YAML file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config root in {path} must be a mapping")
    if overrides:
        data = apply_overrides(data, list(overrides))
    cfg = ExperimentConfig.from_dict(data)
    cfg.validate()
    return cfg

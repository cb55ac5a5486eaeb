"""Run configuration: INI-style sectioned key=value files with validation.

Every key is checked against the schema below; unknown sections or keys and
badly typed values raise :class:`ConfigError` with a message naming the
offender. The canonical text form (sorted sections and keys) is what gets
hashed into checkpoints.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class DatasetSection:
    path: str = ""
    eval_path: str = ""


@dataclass
class ModelSection:
    image_size: int = 64
    k: int = 7
    slot_dim: int = 64
    proj_dim: int = 64
    t_slot: int = 3
    init_mode: str = "gaussian"
    enc_channels: int = 64
    enc_stride: int = 1
    dec_channels: int = 64
    seed_grid: int = 8


@dataclass
class SlpSection:
    enabled: bool = False
    alpha_lr: float = 1.0
    lambda_norm: float = 0.1
    t_spat: int = 1


@dataclass
class OptimizerSection:
    lr: float = 4e-4
    warmup_steps: int = 2500
    half_life_steps: int = 50000
    grad_clip: float = 1.0


@dataclass
class TrainingSection:
    steps: int = 5000
    batch_size: int = 32
    seed: int = 0
    eval_interval: int = 1000
    eval_count: int = 200


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    slp: SlpSection = field(default_factory=SlpSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)

    def sections(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def canonical_text(self):
        lines = []
        for sname in sorted(self.sections()):
            section = self.sections()[sname]
            lines.append(f"[{sname}]")
            for f in sorted(fields(section), key=lambda f: f.name):
                lines.append(f"{f.name} = {getattr(section, f.name)}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.canonical_text())


def _set_key(config, section_name, key, raw):
    sections = config.sections()
    if section_name not in sections:
        raise ConfigError(f"unknown config section [{section_name}]")
    section = sections[section_name]
    spec = {f.name: f.type for f in fields(section)}
    if key not in spec:
        raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
    current = getattr(section, key)
    try:
        if isinstance(current, bool):
            value = _parse_bool(raw)
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = raw.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {section_name}.{key}: {e}") from None
    setattr(section, key, value)


def parse_config(text):
    """Parse config text into a validated :class:`RunConfig`."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    config = RunConfig()
    for section_name in parser.sections():
        for key, raw in parser.items(section_name):
            _set_key(config, section_name, key, raw)
    return config


def load_config(path, overrides=None):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        config = parse_config(f.read())
    if overrides:
        apply_overrides(config, overrides)
    return config


def apply_overrides(config, overrides):
    """Apply {"section.key": "value"} overrides in place."""
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section_name, key = dotted.split(".", 1)
        _set_key(config, section_name, key, str(raw))
    return config


def validate_for_run(config, require_eval=False):
    """Cross-field checks done just before a run starts."""
    if not config.dataset.path:
        raise ConfigError("dataset.path is required")
    if not os.path.exists(config.dataset.path):
        raise ConfigError(f"dataset.path does not exist: {config.dataset.path}")
    if require_eval:
        if not config.dataset.eval_path:
            raise ConfigError("dataset.eval_path is required for evaluation")
        if not os.path.exists(config.dataset.eval_path):
            raise ConfigError(f"dataset.eval_path does not exist: {config.dataset.eval_path}")
    if config.model.init_mode not in ("gaussian", "learned_query"):
        raise ConfigError(f"model.init_mode must be gaussian or learned_query, got {config.model.init_mode!r}")
    for name, value in (
        ("training.steps", config.training.steps),
        ("training.batch_size", config.training.batch_size),
        ("training.eval_interval", config.training.eval_interval),
    ):
        if value < (0 if name == "training.steps" else 1):
            raise ConfigError(f"{name} must be positive, got {value}")
    if config.slp.t_spat < 0:
        raise ConfigError(f"slp.t_spat must be nonnegative, got {config.slp.t_spat}")
    if config.slp.alpha_lr <= 0:
        raise ConfigError(f"slp.alpha_lr must be positive, got {config.slp.alpha_lr}")
    if config.optimizer.lr <= 0:
        raise ConfigError(f"optimizer.lr must be positive, got {config.optimizer.lr}")
    return config

"""Declarative run configuration: one file, dotted-key overrides, documented keys."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DatasetSpec
from .errors import ConfigError
from .losses import LossWeights
from .model.checkpoint import config_hash
from .model.networks import ModelConfig

SEED_ENV = "UDA_ALIGN_SEED"


@dataclass
class TrainConfig:
    init_iters: int = 1500
    total_iters: int = 2000
    lr_g: float = 0.03
    momentum: float = 0.9
    poly_power: float = 0.9
    weight_decay: float = 5e-4
    lr_d: float = 5e-5
    adam_betas: tuple = (0.9, 0.99)
    batch_size: int = 1
    tau: float = 0.9
    seed: int = 0
    log_interval: int = 10
    ima: bool = True
    gfa: bool = True
    isia: bool = True
    aim: bool = True
    self_training: bool = True
    connectivity: int = 4
    min_instance_px: int = 4
    bank_capacity: int = 10
    pool_eps: float = 1e-5
    aim_warmup_iters: int | None = None
    adv_label_convention: str = "target_one"
    # "literal" uses eta as computed; "unit_mean" rescales it to mean 1 over co-present classes
    eta_scale: str = "unit_mean"
    audit: bool = False

    def validate(self):
        if self.self_training and self.total_iters > 0 and not (
                0 < self.init_iters < self.total_iters):
            raise ConfigError("train.init_iters must satisfy 0 < init_iters < total_iters")
        if self.total_iters < 0 or self.init_iters < 0:
            raise ConfigError("train.total_iters and train.init_iters must be >= 0")
        if not 0 < self.tau <= 1:
            raise ConfigError(f"train.tau must lie in (0, 1], got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.connectivity not in (4, 8):
            raise ConfigError("train.connectivity must be 4 or 8")
        if self.log_interval < 1:
            raise ConfigError("train.log_interval must be >= 1")
        if self.adv_label_convention not in ("target_one", "source_one"):
            raise ConfigError("train.adv_label_convention must be target_one or source_one")
        if self.eta_scale not in ("literal", "unit_mean"):
            raise ConfigError("train.eta_scale must be literal or unit_mean")
        return self

    @property
    def stage1_iters(self):
        return min(self.init_iters, self.total_iters) if self.self_training else self.total_iters

    @property
    def warmup_iters(self):
        if self.aim_warmup_iters is not None:
            return self.aim_warmup_iters
        return self.stage1_iters // 10


@dataclass
class Config:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    n_source: int = 400
    n_target: int = 400
    data_dir: str = "data"
    run_dir: str = "runs/default"

    SECTIONS = ("data", "model", "train", "loss")
    # keys that do not change what a checkpoint means
    UNHASHED = ("data_dir", "run_dir")

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.train.validate()
        self.loss.validate()
        if self.n_source < 1 or self.n_target < 1:
            raise ConfigError("n_source and n_target must be >= 1")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        d = self.to_dict()
        for key in self.UNHASHED:
            d.pop(key, None)
        d["train"].pop("audit", None)
        d["train"].pop("log_interval", None)
        return config_hash(d)


def _coerce(cls_field, value, key):
    if isinstance(value, list):
        return tuple(value)
    # YAML 1.1 reads "1e-4" (no dot) as a string
    if isinstance(cls_field.default, float) and not isinstance(value, bool):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} expects a number, got {value!r}")
    return value


def _build(section_cls, values, prefix):
    if values is None:
        return section_cls()
    if not isinstance(values, dict):
        raise ConfigError(f"config section {prefix!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(section_cls)}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + '.' + u for u in unknown)}")
    return section_cls(**{k: _coerce(names[k], v, f"{prefix}.{k}") for k, v in values.items()})


_SECTION_TYPES = {"data": DatasetSpec, "model": ModelConfig, "train": TrainConfig,
                  "loss": LossWeights}


def config_from_dict(raw: dict) -> Config:
    raw = dict(raw or {})
    top = {f.name for f in dataclasses.fields(Config)} - set(Config.SECTIONS)
    unknown = sorted(set(raw) - top - set(Config.SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {name: _build(cls, raw.get(name), name) for name, cls in _SECTION_TYPES.items()}
    kwargs.update({k: raw[k] for k in top if k in raw})
    return Config(**kwargs)


def apply_overrides(cfg: Config, overrides) -> Config:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars/lists."""
    raw = cfg.to_dict()
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key: {key}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = yaml.safe_load(value)
    return config_from_dict(raw)


def apply_seed_env(cfg: Config, environ=None) -> Config:
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        try:
            seed = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}")
        cfg.train.seed = seed
        cfg.data.seed = seed
    return cfg


def load_config(path=None, overrides=None, environ=None) -> Config:
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}")
    try:
        cfg = config_from_dict(raw)
        cfg = apply_overrides(cfg, overrides)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return apply_seed_env(cfg, environ).validate()


def documented_keys():
    """``(key, default)`` for every config key, in declaration order."""
    out = []
    cfg = Config()
    for f in dataclasses.fields(Config):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                out.append((f"{f.name}.{sub.name}", getattr(value, sub.name)))
        else:
            out.append((f.name, value))
    return out


def save_config(cfg: Config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = cfg.to_dict()

    def plain(x):
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, (tuple, list)):
            return [plain(v) for v in x]
        return x

    path.write_text(yaml.safe_dump(plain(d), sort_keys=False))
    return path

"""Flat ``key = value`` config files with [model], [train] and [grow] sections.

Example::

    [model]
    num_layers = 2
    hidden = 64
    heads = 2
    vocab = auto          # taken from the corpus
    seq_len = 64

    [train]
    steps = 2000
    batch_size = 16
    lr = 3e-3

    [grow]
    ligo_steps = 100
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

MODEL_KEYS = {"num_layers", "hidden", "heads", "vocab", "seq_len", "ffn_mult", "dtype"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass(frozen=True)
class GrowConfig:
    ligo_steps: int = 100
    ligo_lr: float = 1e-3
    ligo_init: str = "stack_net2net"
    noise: float = 1e-3
    normalization: str = "sqrt"
    width: str = "net2net"     # width operator composed with stack/interpolate
    depth: str = "stack"       # depth operator composed with net2net/copy
    seed: int = 0


GROW_KEYS = {f.name for f in fields(GrowConfig)}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grow: dict = field(default_factory=dict)
    path: Optional[str] = None

    def model_config(self, vocab: Optional[int] = None) -> ModelConfig:
        m = dict(self.model)
        if m.get("vocab", "auto") == "auto":
            if vocab is None:
                raise ConfigError("vocab = auto needs a corpus to resolve against")
            m["vocab"] = vocab
        try:
            return ModelConfig(**{k: _coerce(k, v, ModelConfig) for k, v in m.items()})
        except TypeError as e:
            raise ConfigError(f"{self.path}: bad [model] section ({e})") from None

    def train_config(self, **defaults) -> TrainConfig:
        vals = dict(defaults)
        vals.update({k: _coerce(k, v, TrainConfig) for k, v in self.train.items()})
        return TrainConfig(**vals)

    def grow_config(self) -> GrowConfig:
        return GrowConfig(**{k: _coerce(k, v, GrowConfig) for k, v in self.grow.items()})

    def resolved(self) -> dict:
        return {"model": dict(self.model), "train": dict(self.train), "grow": dict(self.grow)}


def _coerce(key, value, cls):
    types = {f.name: f.type for f in fields(cls)}
    t = types.get(key)
    if isinstance(value, str):
        value = value.strip()
    try:
        if t in (int, "int"):
            return int(value)
        if t in (float, "float"):
            return float(value)
        if t in (bool, "bool"):
            if isinstance(value, bool):
                return value
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


def load_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as f:
            cp.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    allowed = {"model": MODEL_KEYS, "train": TRAIN_KEYS, "grow": GROW_KEYS}
    cfg = RunConfig(path=str(path))
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for k, v in cp[section].items():
            if k not in allowed[section]:
                raise ConfigError(f"{path}: unknown key {k!r} in [{section}]")
            getattr(cfg, section)[k] = v
    return cfg

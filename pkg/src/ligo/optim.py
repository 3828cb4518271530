"""In-place optimizers over a dict of named numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Dict

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.name!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")

    def lr_at(self, step: int) -> float:
        """Learning rate of 1-indexed ``step`` under linear warmup."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        return self.lr

    def to_dict(self):
        return asdict(self)


class SGD:
    def __init__(self, cfg: OptimizerConfig, params: Dict[str, np.ndarray]):
        self.cfg, self.params = cfg, params

    def step(self, grads: Dict[str, np.ndarray], step: int):
        lr = self.cfg.lr_at(step)
        for k, p in self.params.items():
            g = grads[k]
            if self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * p
            p -= (lr * g).astype(p.dtype)


class Adam:
    def __init__(self, cfg: OptimizerConfig, params: Dict[str, np.ndarray]):
        self.cfg, self.params = cfg, params
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Dict[str, np.ndarray], step: int):
        c = self.cfg
        lr = c.lr_at(step)
        bc1 = 1.0 - c.beta1 ** step
        bc2 = 1.0 - c.beta2 ** step
        for k, p in self.params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            upd = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if c.weight_decay:
                upd = upd + c.weight_decay * p
            p -= (lr * upd).astype(p.dtype)


def make_optimizer(cfg: OptimizerConfig, params: Dict[str, np.ndarray]):
    return (Adam if cfg.name == "adam" else SGD)(cfg, params)

"""A small pre-LayerNorm causal transformer with hand-written gradients.

Weights follow the ``y = W @ x`` convention: every matrix is stored as
(out_features, in_features). The token embedding is ``D x V`` (a linear map
applied to one-hot tokens), the positional table is ``D x seq_len`` and the
output head is ``V x D``. Attention weights are whole ``D x D`` matrices;
heads only appear as a reshape inside :func:`forward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)

LAYER_ROLES = ("ln1", "q", "k", "v", "o", "ln2", "fc1", "fc2")
DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden: int
    heads: int
    vocab: int
    seq_len: int
    ffn_mult: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("num_layers", "hidden", "heads", "vocab", "seq_len", "ffn_mult"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {self.dtype!r}")

    @property
    def ffn(self) -> int:
        return self.ffn_mult * self.hidden

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def replace(self, **kw) -> "ModelConfig":
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class ParamKey:
    """Name of one tensor: ``emb.weight``, ``layers.3.fc1.bias`` and so on."""

    role: str
    kind: str = "weight"
    layer: Optional[int] = None

    def __post_init__(self):
        if (self.layer is not None) != (self.role in LAYER_ROLES):
            raise ValueError(f"layer index must be given iff role is per-layer: {self}")

    @property
    def name(self) -> str:
        if self.layer is None:
            return f"{self.role}.{self.kind}"
        return f"layers.{self.layer}.{self.role}.{self.kind}"

    @classmethod
    def parse(cls, name: str) -> "ParamKey":
        parts = name.split(".")
        if parts[0] == "layers":
            return cls(parts[2], parts[3], int(parts[1]))
        return cls(parts[0], parts[1])

    def __str__(self):
        return self.name


def layer_shapes(cfg: ModelConfig) -> Dict[Tuple[str, str], Tuple[int, ...]]:
    D, F = cfg.hidden, cfg.ffn
    return {
        ("ln1", "gain"): (D,), ("ln1", "bias"): (D,),
        ("q", "weight"): (D, D), ("q", "bias"): (D,),
        ("k", "weight"): (D, D), ("k", "bias"): (D,),
        ("v", "weight"): (D, D), ("v", "bias"): (D,),
        ("o", "weight"): (D, D), ("o", "bias"): (D,),
        ("ln2", "gain"): (D,), ("ln2", "bias"): (D,),
        ("fc1", "weight"): (F, D), ("fc1", "bias"): (F,),
        ("fc2", "weight"): (D, F), ("fc2", "bias"): (D,),
    }


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered schema of every tensor the config demands."""
    shapes = {
        "emb.weight": (cfg.hidden, cfg.vocab),
        "pos.weight": (cfg.hidden, cfg.seq_len),
    }
    per_layer = layer_shapes(cfg)
    for l in range(cfg.num_layers):
        for (role, kind), shp in per_layer.items():
            shapes[ParamKey(role, kind, l).name] = shp
    shapes["out.weight"] = (cfg.vocab, cfg.hidden)
    return shapes


@dataclass
class ParamSet:
    config: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"ParamSet keys do not match schema (missing {missing}, extra {extra})")
        for name, shp in expected.items():
            if self.tensors[name].shape != shp:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, schema wants {shp}")
        # keep schema order so iteration and serialization are deterministic
        self.tensors = {name: self.tensors[name] for name in expected}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def layer(self, l: int, role: str, kind: str = "weight") -> np.ndarray:
        return self.tensors[ParamKey(role, kind, l).name]

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: str) -> "ParamSet":
        cfg = self.config.replace(dtype=dtype)
        return ParamSet(cfg, {k: v.astype(cfg.np_dtype) for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, x: np.ndarray) -> "ParamSet":
        out, i = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(x[i:i + v.size], dtype=v.dtype).reshape(v.shape)
            i += v.size
        return ParamSet(self.config, out)


def init_random(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Scaled-normal weights, unit gains, zero biases.

    Residual output projections (``o``, ``fc2``) use the GPT-2 style
    ``INIT_STD / sqrt(2 L)`` scale.
    """
    dt = cfg.np_dtype
    resid_std = INIT_STD / math.sqrt(2 * cfg.num_layers)
    tensors = {}
    for name, shp in param_shapes(cfg).items():
        key = ParamKey.parse(name)
        if key.kind == "gain":
            tensors[name] = np.ones(shp, dtype=dt)
        elif key.kind == "bias":
            tensors[name] = np.zeros(shp, dtype=dt)
        else:
            std = resid_std if key.role in ("o", "fc2") else INIT_STD
            tensors[name] = (rng.standard_normal(shp) * std).astype(dt)
    return ParamSet(cfg, tensors)


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def flops_per_step(cfg: ModelConfig, batch_size: int, seq: int) -> int:
    """Matmul FLOPs of one training step (forward + backward = 3x forward).

    Each ``m x k`` by ``k x n`` product costs ``2 m k n``. Attention score
    and weighted-value products are counted densely (the causal mask does
    not discount them). Embedding lookups are free.
    """
    n = batch_size * seq
    D, F, V = cfg.hidden, cfg.ffn, cfg.vocab
    per_layer = (
        4 * 2 * D * D * n          # q, k, v, o projections
        + 2 * F * D * n            # fc1
        + 2 * D * F * n            # fc2
        + 2 * 2 * batch_size * seq * seq * D  # q k^T and p v over all heads
    )
    forward = cfg.num_layers * per_layer + 2 * V * D * n
    return 3 * forward


# ---------------------------------------------------------------- forward/backward

def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    n = xc * rstd
    return n * g + b, (n, rstd)


def _layernorm_back(dy, g, cache):
    n, rstd = cache
    dg = (dy * n).reshape(-1, n.shape[-1]).sum(0)
    db = dy.reshape(-1, n.shape[-1]).sum(0)
    dn = dy * g
    dx = rstd * (dn - dn.mean(-1, keepdims=True) - n * (dn * n).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _split(x, heads):
    B, T, D = x.shape
    return x.reshape(B, T, heads, D // heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, T, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * hd)


def _check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be batch x seq, got shape {tokens.shape}")
    if tokens.shape[1] > cfg.seq_len:
        raise ShapeError(f"sequence length {tokens.shape[1]} exceeds seq_len={cfg.seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
        raise ShapeError(f"token ids must lie in [0, {cfg.vocab})")
    return tokens


def _forward(params: ParamSet, tokens):
    cfg = params.config
    tokens = _check_tokens(cfg, tokens)
    B, T = tokens.shape
    H = cfg.heads
    hd = cfg.hidden // H
    scale = 1.0 / math.sqrt(hd)
    mask = np.triu(np.ones((T, T), dtype=bool), k=1)

    x = params["emb.weight"].T[tokens] + params["pos.weight"][:, :T].T
    caches = []
    for l in range(cfg.num_layers):
        p = lambda role, kind="weight": params.layer(l, role, kind)
        c = {"x_in": x}
        h, c["ln1"] = _layernorm(x, p("ln1", "gain"), p("ln1", "bias"))
        c["h1"] = h
        q = _split(h @ p("q").T + p("q", "bias"), H)
        k = _split(h @ p("k").T + p("k", "bias"), H)
        v = _split(h @ p("v").T + p("v", "bias"), H)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = np.where(mask, -np.inf, s)
        s = s - s.max(-1, keepdims=True)
        e = np.exp(s)
        att = e / e.sum(-1, keepdims=True)
        a = _merge(att @ v)
        c.update(q=q, k=k, v=v, att=att, a=a)
        x = x + a @ p("o").T + p("o", "bias")
        c["x_mid"] = x
        h2, c["ln2"] = _layernorm(x, p("ln2", "gain"), p("ln2", "bias"))
        c["h2"] = h2
        u = h2 @ p("fc1").T + p("fc1", "bias")
        g, t = _gelu(u)
        c.update(u=u, t=t, g=g)
        x = x + g @ p("fc2").T + p("fc2", "bias")
        caches.append(c)
    logits = x @ params["out.weight"].T
    return logits, (tokens, x, caches)


def forward(params: ParamSet, tokens) -> np.ndarray:
    """Logits of shape (batch, seq, vocab)."""
    return _forward(params, tokens)[0]


def _log_softmax(logits):
    z = logits - logits.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def loss(logits, targets) -> float:
    """Mean next-token cross-entropy."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not conform to targets {targets.shape}")
    lp = _log_softmax(logits)
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)
    return float(-picked.mean())


def grad(params: ParamSet, tokens, targets, scale: float = 1.0):
    """Loss and its gradient with respect to every tensor of ``params``.

    ``scale`` multiplies the loss before differentiation.
    Returns ``(loss_value, {name: gradient})`` where the loss is unscaled.
    """
    cfg = params.config
    logits, (tokens, x_final, caches) = _forward(params, tokens)
    targets = np.asarray(targets)
    B, T = tokens.shape
    H = cfg.heads
    hd = cfg.hidden // H
    att_scale = 1.0 / math.sqrt(hd)
    dt = logits.dtype

    lp = _log_softmax(logits)
    loss_value = float(-np.take_along_axis(lp, targets[..., None], axis=-1).mean())
    dlogits = np.exp(lp)
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= dt.type(scale / (B * T))

    grads = {name: np.zeros_like(v) for name, v in params.items()}
    flat = lambda a: a.reshape(-1, a.shape[-1])

    W_out = params["out.weight"]
    grads["out.weight"] = flat(dlogits).T @ flat(x_final)
    dx = dlogits @ W_out

    for l in reversed(range(cfg.num_layers)):
        c = caches[l]
        p = lambda role, kind="weight": params.layer(l, role, kind)
        gk = lambda role, kind="weight": f"layers.{l}.{role}.{kind}"

        # FFN branch
        grads[gk("fc2")] = flat(dx).T @ flat(c["g"])
        grads[gk("fc2", "bias")] = flat(dx).sum(0)
        dg = dx @ p("fc2")
        du = _gelu_back(dg, c["u"], c["t"])
        grads[gk("fc1")] = flat(du).T @ flat(c["h2"])
        grads[gk("fc1", "bias")] = flat(du).sum(0)
        dh2 = du @ p("fc1")
        dxm, grads[gk("ln2", "gain")], grads[gk("ln2", "bias")] = _layernorm_back(
            dh2, p("ln2", "gain"), c["ln2"])
        dx = dx + dxm

        # attention branch
        grads[gk("o")] = flat(dx).T @ flat(c["a"])
        grads[gk("o", "bias")] = flat(dx).sum(0)
        da = _split(dx @ p("o"), H)
        att, q, k, v = c["att"], c["q"], c["k"], c["v"]
        dv = att.transpose(0, 1, 3, 2) @ da
        datt = da @ v.transpose(0, 1, 3, 2)
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * att_scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dh = np.zeros_like(c["h1"])
        for role, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = _merge(dproj)
            grads[gk(role)] = flat(dproj).T @ flat(c["h1"])
            grads[gk(role, "bias")] = flat(dproj).sum(0)
            dh += dproj @ p(role)
        dxa, grads[gk("ln1", "gain")], grads[gk("ln1", "bias")] = _layernorm_back(
            dh, p("ln1", "gain"), c["ln1"])
        dx = dx + dxa

    demb = np.zeros_like(params["emb.weight"].T)
    np.add.at(demb, tokens.ravel(), flat(dx))
    grads["emb.weight"] = demb.T
    grads["pos.weight"][:, :T] = dx.sum(0).T
    return loss_value, grads


def evaluate(params: ParamSet, batches) -> float:
    """Mean loss over an iterable of ``(tokens, targets)`` pairs."""
    vals = [loss(forward(params, x), y) for x, y in batches]
    if not vals:
        raise ValueError("no evaluation batches")
    return float(np.mean(vals))

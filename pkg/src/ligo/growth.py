"""Non-learned growth operators: stacking, interpolation, Net2Net, direct copy.

Layers are 0-indexed in code. The 1-indexed rules they implement are

* stacking:       new layer l copies source layer ((l - 1) mod L1) + 1
* interpolation:  new layer i copies source layer ceil(i / k)

Net2Net is provided at two levels:

* :func:`net2net_widen` / :func:`grow_net2net_mlp` apply the classical
  selection-and-normalize rule to a plain MLP, which is exactly function
  preserving.
* :func:`grow_net2net_width` widens a transformer with one residual-stream
  selection shared by every ``D``-sized interface and one selection per
  layer for the FFN hidden space. It uses the same tied width factors a
  LiGO operator can express, so that LiGO reproduces it exactly. It is not
  function preserving (LayerNorm statistics change under duplication).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import SpecError
from .linalg import make_rng
from .model import INIT_STD, ModelConfig, ParamKey, ParamSet, param_shapes

OPERATORS = ("stack", "interpolate", "net2net", "copy", "ligo")
DEPTH_OPERATORS = ("stack", "interpolate")
WIDTH_OPERATORS = ("net2net", "copy")
NORMALIZATIONS = ("sqrt", "none", "split")
DEFAULT_NORMALIZATION = "sqrt"


@dataclass
class GrowthSpec:
    source: ModelConfig
    target: ModelConfig
    operator: str
    seed: int = 0
    opts: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise SpecError(f"unknown operator {self.operator!r}; choose from {OPERATORS}")
        s, t = self.source, self.target
        if t.num_layers < s.num_layers or t.hidden < s.hidden:
            raise SpecError(f"target (L={t.num_layers}, D={t.hidden}) is smaller than "
                            f"source (L={s.num_layers}, D={s.hidden})")
        for name in ("vocab", "seq_len", "ffn_mult"):
            if getattr(s, name) != getattr(t, name):
                raise SpecError(f"{name} must match between source and target")

    @property
    def depth_ratio(self) -> int:
        L1, L2 = self.source.num_layers, self.target.num_layers
        if L2 % L1:
            raise SpecError(f"depth growth {L1} -> {L2} is not an integer multiple")
        return L2 // L1

    def require_depth_only(self):
        if self.source.hidden != self.target.hidden:
            raise SpecError(f"{self.operator} needs equal hidden sizes, got "
                            f"{self.source.hidden} -> {self.target.hidden}")
        return self.depth_ratio

    def require_width_only(self):
        if self.source.num_layers != self.target.num_layers:
            raise SpecError(f"{self.operator} needs equal layer counts, got "
                            f"{self.source.num_layers} -> {self.target.num_layers}")


# ---------------------------------------------------------------- depth

def stack_source_layer(l: int, L1: int) -> int:
    return l % L1


def interpolate_source_layer(l: int, k: int) -> int:
    return l // k


def _regroup_layers(params: ParamSet, target: ModelConfig, src_of) -> ParamSet:
    tensors = {}
    for name in param_shapes(target):
        key = ParamKey.parse(name)
        if key.layer is None:
            tensors[name] = params[name].copy()
        else:
            tensors[name] = params.layer(src_of(key.layer), key.role, key.kind).copy()
    return ParamSet(target, tensors)


def grow_stack(params: ParamSet, spec: GrowthSpec) -> ParamSet:
    spec.require_depth_only()
    L1 = spec.source.num_layers
    return _regroup_layers(params, spec.target, lambda l: stack_source_layer(l, L1))


def grow_interpolate(params: ParamSet, spec: GrowthSpec) -> ParamSet:
    k = spec.require_depth_only()
    return _regroup_layers(params, spec.target, lambda l: interpolate_source_layer(l, k))


# ---------------------------------------------------------------- selections

def random_selection(d_small: int, d_big: int, rng: np.random.Generator) -> np.ndarray:
    """Binary ``d_small x (d_big - d_small)`` matrix with exactly one 1 per column."""
    if d_big < d_small:
        raise SpecError(f"cannot shrink width {d_small} -> {d_big}")
    S = np.zeros((d_small, d_big - d_small))
    if d_big > d_small:
        S[rng.integers(0, d_small, size=d_big - d_small), np.arange(d_big - d_small)] = 1.0
    return S


def selection_index(S: np.ndarray) -> np.ndarray:
    """Old unit copied by each new unit: ``[0, 1, ..., d_small-1, g(d_small), ...]``."""
    return np.concatenate([np.arange(S.shape[0]), np.argmax(S, axis=0)]).astype(np.int64)


def replica_counts(S: np.ndarray) -> np.ndarray:
    """Diagonal of ``diag(S 1) + I``: how many times each old unit is present after growth."""
    return S.sum(axis=1) + 1.0


def replica_scale(S: np.ndarray, normalization: str = DEFAULT_NORMALIZATION) -> np.ndarray:
    """Per-new-unit scale of a tied width factor (see :func:`tied_factor`)."""
    idx = selection_index(S)
    d1 = S.shape[0]
    if normalization == "none":
        return np.ones(idx.size)
    if normalization == "sqrt":
        return 1.0 / np.sqrt(replica_counts(S)[idx])
    if normalization == "split":
        # [I; S~] with S~ = S diag(1^T S)^-1 taken column by column over the copies
        copies = S.sum(axis=1)
        r = np.ones(idx.size)
        r[d1:] = 1.0 / copies[idx[d1:]]
        return r
    raise SpecError(f"unknown normalization {normalization!r}; choose from {NORMALIZATIONS}")


def tied_factor(S: np.ndarray, normalization: str = DEFAULT_NORMALIZATION) -> np.ndarray:
    """Width factor ``F`` (``d_big x d_small``) with ``F[i', g(i')] = r[i']``.

    ``sqrt`` scales every replica of unit ``j`` by ``1/sqrt(c_j)`` so that
    ``F.T @ F = I``; a tied factor used for both the out- and in-dimension
    of a linear path then leaves that path unchanged. ``none`` is plain
    duplication, ``split`` keeps the identity block and divides the copies.
    """
    idx = selection_index(S)
    F = np.zeros((idx.size, S.shape[0]))
    F[np.arange(idx.size), idx] = replica_scale(S, normalization)
    return F


@dataclass
class TransformerSelections:
    emb: np.ndarray          # D1 x (D2 - D1)
    fc1: List[np.ndarray]    # per layer, 4D1 x (4D2 - 4D1)


def draw_selections(source: ModelConfig, target: ModelConfig,
                    rng: np.random.Generator) -> TransformerSelections:
    emb = random_selection(source.hidden, target.hidden, rng)
    fc1 = [random_selection(source.ffn, target.ffn, rng) for _ in range(source.num_layers)]
    return TransformerSelections(emb, fc1)


# ---------------------------------------------------------------- Net2Net, MLP level

def net2net_widen(w: np.ndarray, s_prev: Optional[np.ndarray], s_next: Optional[np.ndarray]) -> np.ndarray:
    """``[I; S_prev^T] D^-1 W [I  S_next]`` with ``D = diag(S_prev 1) + I``.

    ``w`` is laid out for row-vector layers (``x @ w``): rows index inputs,
    columns index outputs. ``None`` means that side is not widened.
    """
    if s_prev is not None:
        counts = replica_counts(s_prev)
        w = (w / counts[:, None])[selection_index(s_prev)]
    if s_next is not None:
        w = w[:, selection_index(s_next)]
    return w


@dataclass
class Mlp:
    """Uniform-width MLP, ``x -> W_L act(... act(W_1 x + b_1) ...) + b_L``.

    Weights are ``(out, in)``; all layers are ``D x D``.
    """

    weights: np.ndarray      # L x D x D
    biases: np.ndarray       # L x D

    @property
    def num_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


def random_mlp(num_layers: int, width: int, rng: np.random.Generator) -> Mlp:
    w = rng.standard_normal((num_layers, width, width)) / math.sqrt(width)
    b = rng.standard_normal((num_layers, width)) * 0.1
    return Mlp(w, b)


def mlp_forward(mlp: Mlp, x: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Apply the MLP to the rows of ``x`` (``n x D``)."""
    h = x
    for l in range(mlp.num_layers):
        h = h @ mlp.weights[l].T + mlp.biases[l]
        if l < mlp.num_layers - 1:
            if activation == "relu":
                h = np.maximum(h, 0.0)
            elif activation != "linear":
                raise ValueError(activation)
    return h


@dataclass
class GrownMlp:
    """A widened MLP together with the input lift and output readout.

    The grown network computes ``readout(mlp(lift x))``; for Net2Net this
    equals the source network exactly. The input plays the role of the
    embedding (it supplies ``S_0``) and the readout consumes ``S_L``.
    """

    mlp: Mlp
    selections: List[np.ndarray]   # S_0 ... S_L

    def lift(self, x: np.ndarray) -> np.ndarray:
        return x[:, selection_index(self.selections[0])]

    def readout(self, y: np.ndarray) -> np.ndarray:
        S = self.selections[-1]
        return (y @ tied_factor(S, "none")) / replica_counts(S)

    def __call__(self, x: np.ndarray, activation: str = "relu") -> np.ndarray:
        return self.readout(mlp_forward(self.mlp, self.lift(x), activation))


def grow_net2net_mlp(mlp: Mlp, width: int, rng: np.random.Generator) -> GrownMlp:
    L, D1 = mlp.num_layers, mlp.width
    sels = [random_selection(D1, width, rng) for _ in range(L + 1)]
    W = np.empty((L, width, width))
    b = np.empty((L, width))
    for l in range(L):
        # storage is (out, in) = transpose of the row-vector layout
        W[l] = net2net_widen(mlp.weights[l].T, sels[l], sels[l + 1]).T
        b[l] = mlp.biases[l][selection_index(sels[l + 1])]
    return GrownMlp(Mlp(W, b), sels)


# ---------------------------------------------------------------- Net2Net, transformer level

def _widen(x: np.ndarray, out_idx=None, out_r=None, in_idx=None, in_r=None) -> np.ndarray:
    """Gather-and-scale form of ``F_out @ x @ F_in.T`` for tied selection factors."""
    if out_idx is not None:
        x = x[out_idx] * (out_r[:, None] if x.ndim == 2 else out_r)
    if in_idx is not None:
        x = x[:, in_idx] * in_r[None, :]
    return x


def grow_net2net_width(params: ParamSet, spec: GrowthSpec) -> ParamSet:
    spec.require_width_only()
    src, tgt = spec.source, spec.target
    norm = str(spec.opts.get("normalization", DEFAULT_NORMALIZATION))
    sels = draw_selections(src, tgt, make_rng(spec.seed))
    e_idx, e_r = selection_index(sels.emb), replica_scale(sels.emb, norm)
    out = {
        "emb.weight": _widen(params["emb.weight"], e_idx, e_r),
        "pos.weight": _widen(params["pos.weight"], e_idx, e_r),
        "out.weight": _widen(params["out.weight"], in_idx=e_idx, in_r=e_r),
    }
    for l in range(src.num_layers):
        f_idx, f_r = selection_index(sels.fc1[l]), replica_scale(sels.fc1[l], norm)
        p = lambda role, kind="weight": params.layer(l, role, kind)
        n = lambda role, kind="weight": ParamKey(role, kind, l).name
        for role in ("q", "k", "v"):
            out[n(role)] = _widen(p(role), e_idx, e_r, e_idx, e_r)
            out[n(role, "bias")] = _widen(p(role, "bias"), e_idx, e_r)
        out[n("o")] = _widen(p("o"), e_idx, e_r, e_idx, e_r)
        out[n("o", "bias")] = _widen(p("o", "bias"), e_idx, e_r)
        for ln in ("ln1", "ln2"):
            out[n(ln, "gain")] = _widen(p(ln, "gain"), e_idx, e_r)
            out[n(ln, "bias")] = _widen(p(ln, "bias"), e_idx, e_r)
        out[n("fc1")] = _widen(p("fc1"), f_idx, f_r, e_idx, e_r)
        out[n("fc1", "bias")] = _widen(p("fc1", "bias"), f_idx, f_r)
        out[n("fc2")] = _widen(p("fc2"), e_idx, e_r, f_idx, f_r)
        out[n("fc2", "bias")] = _widen(p("fc2", "bias"), e_idx, e_r)
    dt = src.np_dtype
    return ParamSet(tgt, {k: v.astype(dt) for k, v in out.items()})


# ---------------------------------------------------------------- direct copy

def grow_copy(params: ParamSet, spec: GrowthSpec) -> ParamSet:
    """Source tensors in the leading block; new weight entries are fresh init noise.

    New bias entries are zero and new LayerNorm gains are one, matching
    :func:`ligo.model.init_random`.
    """
    spec.require_width_only()
    tgt = spec.target
    rng = make_rng(spec.seed)
    resid_std = INIT_STD / math.sqrt(2 * tgt.num_layers)
    out = {}
    for name, shp in param_shapes(tgt).items():
        key = ParamKey.parse(name)
        old = params[name]
        if key.kind == "gain":
            new = np.ones(shp)
        elif key.kind == "bias":
            new = np.zeros(shp)
        else:
            std = resid_std if key.role in ("o", "fc2") else INIT_STD
            new = rng.standard_normal(shp) * std
        new = new.astype(old.dtype)
        new[tuple(slice(0, s) for s in old.shape)] = old
        out[name] = new
    return ParamSet(tgt, out)


# ---------------------------------------------------------------- composition

def grow(params: ParamSet, spec: GrowthSpec) -> ParamSet:
    """Apply a baseline operator, composing width and depth growth when both change.

    Width is grown first (at the source depth), then depth. ``opts['width']``
    picks the width operator used with stack/interpolate (default net2net);
    ``opts['depth']`` picks the depth operator used with net2net/copy
    (default stack).
    """
    op = spec.operator
    if op == "ligo":
        raise SpecError("ligo growth is learned; use ligo.ligo_operator")
    if op in DEPTH_OPERATORS:
        depth_op, width_op = op, str(spec.opts.get("width", "net2net"))
    else:
        depth_op, width_op = str(spec.opts.get("depth", "stack")), op
    if depth_op not in DEPTH_OPERATORS or width_op not in WIDTH_OPERATORS:
        raise SpecError(f"cannot compose depth={depth_op!r} with width={width_op!r}")
    spec.depth_ratio  # validate before doing any work
    mid_cfg = spec.target.replace(num_layers=spec.source.num_layers, heads=spec.target.heads)
    if spec.target.hidden != spec.source.hidden:
        mid_spec = GrowthSpec(spec.source, mid_cfg, width_op, spec.seed, spec.opts)
        params = (grow_net2net_width if width_op == "net2net" else grow_copy)(params, mid_spec)
    mid_cfg = params.config
    if spec.target.num_layers != spec.source.num_layers:
        depth_spec = GrowthSpec(mid_cfg, spec.target, depth_op, spec.seed, spec.opts)
        params = (grow_stack if depth_op == "stack" else grow_interpolate)(params, depth_spec)
    return ParamSet(spec.target, params.tensors)

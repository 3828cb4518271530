"""Learned linear growth operator (LiGO).

The operator maps a small transformer's parameters to a larger one's in two
passes:

width   every source layer's matrices are expanded as ``B @ W @ A.T`` (the
        Kronecker identity ``(A kron B) vec(W) = vec(B W A^T)``), with the
        factors tied as below;
depth   each target layer's module is a blend ``sum_j w[i, j] * Omega_j`` of
        the width-expanded source layers, one ``L2 x L1`` blender per module.

Tying (everything on the residual stream goes through the one ``B_emb``)::

    q, k, v   B_{q,k,v}[l] @ W @ B_emb.T      bias: B_{q,k,v}[l] @ b
    o         B_emb @ W @ B_v[l].T            bias: B_emb @ b
    fc1       B_fc1[l] @ W @ B_emb.T          bias: B_fc1[l] @ b
    fc2       B_emb @ W @ B_fc1[l].T          bias: B_emb @ b
    ln1, ln2  B_emb @ gain, B_emb @ bias
    emb, pos  B_emb @ W
    out       W @ B_emb.T

Only the factors in :data:`LIGO_SHAPES` are stored; the tied ones are the
same arrays by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import model as tfm
from .errors import DataError, ShapeError, SizeError, SpecError
from .growth import (DEFAULT_NORMALIZATION, DEPTH_OPERATORS, GrowthSpec, Mlp, draw_selections,
                     interpolate_source_layer, random_selection, replica_counts, selection_index,
                     stack_source_layer, tied_factor)
from .linalg import KRON_CAP, block_diag, kron, kron_apply, make_rng
from .model import ModelConfig, ParamKey, ParamSet
from .optim import OptimizerConfig, make_optimizer

WIDTH_FACTORS = ("B_emb", "B_q", "B_k", "B_v", "B_fc1")
DEPTH_MODULES = ("q", "k", "v", "o", "ln1", "fc1", "fc2", "ln2")
INIT_STRATEGIES = ("stack_net2net", "interpolate_net2net", "random_small")
INIT_NOISE = 1e-3

# module of each per-layer role tensor for depth blending
_BLEND_OF = {"q": "q", "k": "k", "v": "v", "o": "o", "ln1": "ln1", "ln2": "ln2",
             "fc1": "fc1", "fc2": "fc2"}


def ligo_shapes(source: ModelConfig, target: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    L1, L2, D1, D2 = source.num_layers, target.num_layers, source.hidden, target.hidden
    shapes = {
        "B_emb": (D2, D1),
        "B_q": (L1, D2, D1),
        "B_k": (L1, D2, D1),
        "B_v": (L1, D2, D1),
        "B_fc1": (L1, target.ffn, source.ffn),
    }
    for m in DEPTH_MODULES:
        shapes[f"w_{m}"] = (L2, L1)
    return shapes


def ligo_param_count(source: ModelConfig, target: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in ligo_shapes(source, target).values())


def _check_growable(source: ModelConfig, target: ModelConfig):
    if target.num_layers < source.num_layers or target.hidden < source.hidden:
        raise SpecError(f"target (L={target.num_layers}, D={target.hidden}) is smaller than "
                        f"source (L={source.num_layers}, D={source.hidden})")
    for name in ("vocab", "seq_len", "ffn_mult"):
        if getattr(source, name) != getattr(target, name):
            raise SpecError(f"{name} must match between source and target")


@dataclass
class LigoParams:
    source: ModelConfig
    target: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = ligo_shapes(self.source, self.target)
        if set(shapes) != set(self.tensors):
            raise ShapeError(f"LigoParams keys {sorted(self.tensors)} do not match {sorted(shapes)}")
        for k, s in shapes.items():
            if self.tensors[k].shape != s:
                raise ShapeError(f"{k}: shape {self.tensors[k].shape}, expected {s}")
        self.tensors = {k: self.tensors[k] for k in shapes}

    def __getitem__(self, k):
        return self.tensors[k]

    def items(self):
        return iter(self.tensors.items())

    def copy(self) -> "LigoParams":
        return LigoParams(self.source, self.target, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, x) -> "LigoParams":
        out, i = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(x[i:i + v.size], dtype=v.dtype).reshape(v.shape)
            i += v.size
        return LigoParams(self.source, self.target, out)


# ---------------------------------------------------------------- expansion

def _width_pass(small: ParamSet, p: LigoParams) -> Dict[str, np.ndarray]:
    """Width-expanded source tensors, still at source depth."""
    Be = p["B_emb"]
    out = {
        "emb.weight": Be @ small["emb.weight"],
        "pos.weight": Be @ small["pos.weight"],
        "out.weight": small["out.weight"] @ Be.T,
    }
    for l in range(p.source.num_layers):
        w = lambda role, kind="weight": small.layer(l, role, kind)
        n = lambda role, kind="weight": ParamKey(role, kind, l).name
        Bq, Bk, Bv, Bf = p["B_q"][l], p["B_k"][l], p["B_v"][l], p["B_fc1"][l]
        out[n("q")] = kron_apply(Be, Bq, w("q"))
        out[n("k")] = kron_apply(Be, Bk, w("k"))
        out[n("v")] = kron_apply(Be, Bv, w("v"))
        out[n("o")] = kron_apply(Bv, Be, w("o"))
        out[n("fc1")] = kron_apply(Be, Bf, w("fc1"))
        out[n("fc2")] = kron_apply(Bf, Be, w("fc2"))
        out[n("q", "bias")] = Bq @ w("q", "bias")
        out[n("k", "bias")] = Bk @ w("k", "bias")
        out[n("v", "bias")] = Bv @ w("v", "bias")
        out[n("o", "bias")] = Be @ w("o", "bias")
        out[n("fc1", "bias")] = Bf @ w("fc1", "bias")
        out[n("fc2", "bias")] = Be @ w("fc2", "bias")
        for ln in ("ln1", "ln2"):
            out[n(ln, "gain")] = Be @ w(ln, "gain")
            out[n(ln, "bias")] = Be @ w(ln, "bias")
    return out


def ligo_expand(small: ParamSet, p: LigoParams, target: Optional[ModelConfig] = None) -> ParamSet:
    """Grow ``small`` into a ``target``-shaped ParamSet with the operator ``p``."""
    target = target or p.target
    if small.config.replace(dtype=p.source.dtype) != p.source:
        raise ShapeError(f"small model config {small.config} does not match operator source {p.source}")
    if target.replace(dtype=p.target.dtype) != p.target:
        raise ShapeError(f"target config {target} does not match operator target {p.target}")
    wide = _width_pass(small, p)
    L1 = p.source.num_layers
    tensors = {k: wide[k] for k in ("emb.weight", "pos.weight", "out.weight")}
    for (role, kind) in tfm.layer_shapes(p.source):
        stacked = np.stack([wide[ParamKey(role, kind, j).name] for j in range(L1)])
        blended = np.tensordot(p[f"w_{_BLEND_OF[role]}"], stacked, axes=1)
        for i in range(target.num_layers):
            tensors[ParamKey(role, kind, i).name] = blended[i]
    dt = target.np_dtype
    return ParamSet(target, {k: np.ascontiguousarray(v, dtype=dt) for k, v in tensors.items()})


def ligo_vjp(small: ParamSet, p: LigoParams, dbig: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Pull a gradient on the expanded ParamSet back to the operator parameters.

    This is the adjoint of :func:`ligo_expand` viewed as a function of ``p``
    with ``small`` held fixed.
    """
    L1, L2 = p.source.num_layers, p.target.num_layers
    wide = _width_pass(small, p)
    g = {k: np.zeros_like(v) for k, v in p.items()}

    # depth pass: Omega_i = sum_j w[i, j] wide_j
    dwide: Dict[str, np.ndarray] = {}
    for (role, kind) in tfm.layer_shapes(p.source):
        wname = f"w_{_BLEND_OF[role]}"
        stacked = np.stack([wide[ParamKey(role, kind, j).name] for j in range(L1)])
        dstack = np.stack([dbig[ParamKey(role, kind, i).name] for i in range(L2)])
        axes = tuple(range(1, stacked.ndim))
        g[wname] += np.tensordot(dstack, stacked, axes=(axes, axes))
        back = np.tensordot(p[wname].T, dstack, axes=1)
        for j in range(L1):
            dwide[ParamKey(role, kind, j).name] = back[j]

    # width pass; Omega = Bout @ W @ Bin.T gives dBout = dO @ Bin @ W.T, dBin = dO.T @ Bout @ W
    Be = p["B_emb"]
    dBe = g["B_emb"]
    dBe += dbig["emb.weight"] @ small["emb.weight"].T
    dBe += dbig["pos.weight"] @ small["pos.weight"].T
    dBe += dbig["out.weight"].T @ small["out.weight"]
    for l in range(L1):
        w = lambda role, kind="weight": small.layer(l, role, kind)
        d = lambda role, kind="weight": dwide[ParamKey(role, kind, l).name]
        Bq, Bk, Bv, Bf = p["B_q"][l], p["B_k"][l], p["B_v"][l], p["B_fc1"][l]
        for role, Bout, gname in (("q", Bq, "B_q"), ("k", Bk, "B_k"), ("v", Bv, "B_v"),
                                  ("fc1", Bf, "B_fc1")):
            dO, W = d(role), w(role)
            g[gname][l] += dO @ Be @ W.T + np.outer(d(role, "bias"), w(role, "bias"))
            dBe += dO.T @ Bout @ W
        for role, Bin, gname in (("o", Bv, "B_v"), ("fc2", Bf, "B_fc1")):
            dO, W = d(role), w(role)
            dBe += dO @ Bin @ W.T + np.outer(d(role, "bias"), w(role, "bias"))
            g[gname][l] += dO.T @ Be @ W
        for ln in ("ln1", "ln2"):
            dBe += np.outer(d(ln, "gain"), w(ln, "gain")) + np.outer(d(ln, "bias"), w(ln, "bias"))
    return g


def ligo_loss_and_grad(small: ParamSet, p: LigoParams, tokens, targets):
    big = ligo_expand(small, p)
    loss, dbig = tfm.grad(big, tokens, targets)
    return loss, ligo_vjp(small, p, dbig)


def expand_flops(source: ModelConfig, target: ModelConfig) -> int:
    """Matmul FLOPs of one :func:`ligo_expand` call (width + depth passes)."""
    L1, L2 = source.num_layers, target.num_layers
    D1, D2, F1, F2 = source.hidden, target.hidden, source.ffn, target.ffn
    V, T = source.vocab, source.seq_len
    bxa = lambda r2, r1, c1, c2: 2 * r2 * r1 * c1 + 2 * r2 * c1 * c2   # B(r2 x r1) W(r1 x c1) A^T(c1 x c2)
    width = 2 * D2 * D1 * (V + T) + 2 * V * D1 * D2
    per_layer = (4 * bxa(D2, D1, D1, D2) + bxa(F2, F1, D1, D2) + bxa(D2, D1, F1, F2)
                 + 2 * (6 * D2 * D1 + F2 * F1 + 4 * D2 * D1))
    width += L1 * per_layer
    layer_size = sum(int(np.prod(s)) for s in tfm.layer_shapes(target).values())
    depth = 2 * L2 * L1 * layer_size
    return width + depth


def ligo_step_flops(source: ModelConfig, target: ModelConfig, batch_size: int, seq: int) -> int:
    """FLOPs charged for one LiGO learning step: expand, adjoint (2x expand), and a train step."""
    return 3 * expand_flops(source, target) + tfm.flops_per_step(target, batch_size, seq)


# ---------------------------------------------------------------- constructors

def _identity_like(rows: int, cols: int) -> np.ndarray:
    return np.eye(rows, cols)


def _depth_pattern(L1: int, L2: int, rule: str) -> np.ndarray:
    w = np.zeros((L2, L1))
    if rule == "stack":
        for l in range(L2):
            w[l, stack_source_layer(l, L1)] = 1.0
    elif rule == "interpolate":
        for l in range(L2):
            w[l, min(l * L1 // L2, L1 - 1)] = 1.0
    else:
        raise SpecError(f"unknown depth rule {rule!r}")
    return w


def _assemble(source, target, B_emb, B_attn, B_fc1, w) -> LigoParams:
    L1 = source.num_layers
    dt = source.np_dtype
    t = {
        "B_emb": B_emb,
        "B_q": np.stack([B_attn[0][l] for l in range(L1)]),
        "B_k": np.stack([B_attn[1][l] for l in range(L1)]),
        "B_v": np.stack([B_attn[2][l] for l in range(L1)]),
        "B_fc1": np.stack(B_fc1),
    }
    for m in DEPTH_MODULES:
        t[f"w_{m}"] = w
    return LigoParams(source, target.replace(dtype=source.dtype),
                      {k: np.array(v, dtype=dt) for k, v in t.items()})


def _depth_constructor(source: ModelConfig, target: ModelConfig, rule: str) -> LigoParams:
    spec = GrowthSpec(source, target, rule)
    spec.require_depth_only()
    L1, D, F = source.num_layers, source.hidden, source.ffn
    I, If = np.eye(D), np.eye(F)
    attn = [[I] * L1] * 3
    return _assemble(source, target, I, attn, [If] * L1, _depth_pattern(L1, target.num_layers, rule))


def ligo_from_stack(source: ModelConfig, target: ModelConfig) -> LigoParams:
    """Identity width factors and a cyclic depth blender: reproduces ``grow_stack``."""
    return _depth_constructor(source, target, "stack")


def ligo_from_interpolation(source: ModelConfig, target: ModelConfig) -> LigoParams:
    """Identity width factors, each source layer repeated ``k`` times: reproduces ``grow_interpolate``."""
    return _depth_constructor(source, target, "interpolate")


def _net2net_factors(source, target, rng, normalization):
    sels = draw_selections(source, target, rng)
    Fe = tied_factor(sels.emb, normalization)
    Ff = [tied_factor(s, normalization) for s in sels.fc1]
    return Fe, Ff


def ligo_from_net2net(source: ModelConfig, target: ModelConfig, rng: np.random.Generator,
                      normalization: str = DEFAULT_NORMALIZATION) -> LigoParams:
    """Selection factors with identity depth blending: reproduces ``grow_net2net_width``.

    ``rng`` must be in the state ``grow_net2net_width`` seeds its own
    generator with (``make_rng(spec.seed)``) for the selections to agree.
    """
    GrowthSpec(source, target, "net2net").require_width_only()
    Fe, Ff = _net2net_factors(source, target, rng, normalization)
    L1 = source.num_layers
    attn = [[Fe] * L1] * 3
    return _assemble(source, target, Fe, attn, Ff, np.eye(target.num_layers, L1))


def ligo_init(strategy: str, source: ModelConfig, target: ModelConfig, rng: np.random.Generator,
              noise: float = INIT_NOISE, normalization: str = DEFAULT_NORMALIZATION) -> LigoParams:
    """Starting point for :func:`ligo_learn`.

    ``stack_net2net`` (and ``interpolate_net2net``) encode Net2Net width
    growth followed by the named depth rule, then add Gaussian noise of
    standard deviation ``noise`` to every entry. Non-integer depth ratios
    are allowed: the cyclic / proportional rules still define a blender.
    ``random_small`` draws every factor at random around zero.
    """
    _check_growable(source, target)
    if strategy not in INIT_STRATEGIES:
        raise SpecError(f"unknown init strategy {strategy!r}; choose from {INIT_STRATEGIES}")
    L1, L2 = source.num_layers, target.num_layers
    if strategy == "random_small":
        shapes = ligo_shapes(source, target)
        t = {}
        for k, s in shapes.items():
            fan_in = s[-1]
            t[k] = rng.standard_normal(s) / math.sqrt(fan_in)
        dt = source.np_dtype
        return LigoParams(source, target.replace(dtype=source.dtype),
                          {k: v.astype(dt) for k, v in t.items()})
    rule = strategy.split("_")[0]
    Fe, Ff = _net2net_factors(source, target, rng, normalization)
    p = _assemble(source, target, Fe, [[Fe] * L1] * 3, Ff, _depth_pattern(L1, L2, rule))
    if noise:
        dt = source.np_dtype
        p = LigoParams(p.source, p.target,
                       {k: (v + noise * rng.standard_normal(v.shape)).astype(dt) for k, v in p.items()})
    return p


# ---------------------------------------------------------------- learning

def ligo_learn(small: ParamSet, init: LigoParams, batches: Iterable, steps: int,
               opt: Optional[OptimizerConfig] = None,
               callback: Optional[Callable[[int, float], None]] = None) -> LigoParams:
    """Optimize the operator for ``steps`` steps on the loss of the expanded model.

    ``small`` is never modified. ``batches`` yields ``(tokens, targets)``.
    With ``steps == 0`` the initial operator is returned untouched.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return init
    opt = opt or OptimizerConfig()
    p = init.copy()
    optimizer = make_optimizer(opt, p.tensors)
    it = iter(batches)
    for step in range(1, steps + 1):
        try:
            tokens, targets = next(it)
        except StopIteration:
            raise DataError(f"batch stream exhausted after {step - 1} of {steps} LiGO steps") from None
        loss, g = ligo_loss_and_grad(small, p, tokens, targets)
        if not np.isfinite(loss):
            from .errors import DivergenceError
            raise DivergenceError(f"non-finite LiGO loss at step {step}")
        optimizer.step(g, step)
        if callback is not None:
            callback(step, loss)
    return p


# ---------------------------------------------------------------- uniform-width MLP form

@dataclass
class MlpLigo:
    """Untied LiGO for a uniform-width MLP: ``W_new_i = sum_j w[i, j] B_j W_j A_j^T``.

    Biases, when present, are grown by the out-factor ``B_j`` and blended
    with the same ``w``.
    """

    A: np.ndarray   # L1 x D2 x D1
    B: np.ndarray   # L1 x D2 x D1
    w: np.ndarray   # L2 x L1

    @property
    def dims(self):
        L1, D2, D1 = self.A.shape
        return L1, self.w.shape[0], D1, D2


def random_mlp_ligo(L1: int, L2: int, D1: int, D2: int, rng: np.random.Generator) -> MlpLigo:
    return MlpLigo(rng.standard_normal((L1, D2, D1)), rng.standard_normal((L1, D2, D1)),
                   rng.standard_normal((L2, L1)))


def mlp_ligo_expand_weights(theta: np.ndarray, p: MlpLigo) -> np.ndarray:
    """``theta`` is ``L1 x D1 x D1``; returns ``L2 x D2 x D2``."""
    wide = np.stack([kron_apply(p.A[l], p.B[l], theta[l]) for l in range(theta.shape[0])])
    return np.tensordot(p.w, wide, axes=1)


def mlp_ligo_expand(mlp: Mlp, p: MlpLigo) -> Mlp:
    W = mlp_ligo_expand_weights(mlp.weights, p)
    b = np.tensordot(p.w, np.stack([p.B[l] @ mlp.biases[l] for l in range(mlp.num_layers)]), axes=1)
    return Mlp(W, b)


def mlp_ligo_from_stack(L1: int, L2: int, D: int) -> MlpLigo:
    if L2 % L1:
        raise SpecError(f"depth growth {L1} -> {L2} is not an integer multiple")
    I = np.broadcast_to(np.eye(D), (L1, D, D)).copy()
    return MlpLigo(I, I.copy(), _depth_pattern(L1, L2, "stack"))


def mlp_ligo_from_interpolation(L1: int, L2: int, D: int) -> MlpLigo:
    if L2 % L1:
        raise SpecError(f"depth growth {L1} -> {L2} is not an integer multiple")
    I = np.broadcast_to(np.eye(D), (L1, D, D)).copy()
    return MlpLigo(I, I.copy(), _depth_pattern(L1, L2, "interpolate"))


def mlp_ligo_from_net2net(selections: Sequence[np.ndarray]) -> MlpLigo:
    """``A_l`` duplicates-and-normalizes inputs by ``S_{l-1}``; ``B_l`` duplicates outputs by ``S_l``."""
    L = len(selections) - 1
    A = np.stack([tied_factor(selections[l], "none") / replica_counts(selections[l])[None, :]
                  for l in range(L)])
    B = np.stack([tied_factor(selections[l + 1], "none") for l in range(L)])
    return MlpLigo(A, B, np.eye(L))


def assemble_dense_factors(p: MlpLigo, cap: int = KRON_CAP) -> Tuple[np.ndarray, np.ndarray]:
    """Dense ``(L_depth, R_width)`` with ``L_depth = w kron I`` and ``R_width = blockdiag(A_l kron B_l)``."""
    L1, L2, D1, D2 = p.dims
    rows, cols = L2 * D2 * D2, L1 * D1 * D1
    if rows * cols > cap:
        raise SizeError(f"dense M would be {rows} x {cols} (cap {cap} entries)")
    R = block_diag([kron(p.A[l], p.B[l], cap) for l in range(L1)])
    Ld = kron(p.w, np.eye(D2 * D2), cap)
    return Ld, R


def assemble_dense_M(p: MlpLigo, cap: int = KRON_CAP) -> np.ndarray:
    Ld, R = assemble_dense_factors(p, cap)
    return Ld @ R


def check_dense_structure(Ld: np.ndarray, R: np.ndarray, p: MlpLigo) -> List[str]:
    """Names of violated structural properties (empty when all hold)."""
    L1, L2, D1, D2 = p.dims
    n2, n1 = D2 * D2, D1 * D1
    problems = []
    if R.shape != (L1 * n2, L1 * n1):
        problems.append(f"R_width shape {R.shape}")
    else:
        for i in range(L1):
            for j in range(L1):
                blk = R[i * n2:(i + 1) * n2, j * n1:(j + 1) * n1]
                if i != j and np.any(blk):
                    problems.append(f"R_width off-diagonal block ({i},{j}) non-zero")
    if Ld.shape != (L2 * n2, L1 * n2):
        problems.append(f"L_depth shape {Ld.shape}")
    else:
        for i in range(L2):
            for j in range(L1):
                blk = Ld[i * n2:(i + 1) * n2, j * n2:(j + 1) * n2]
                if not np.array_equal(blk, p.w[i, j] * np.eye(n2)):
                    problems.append(f"L_depth block ({i},{j}) is not w[{i},{j}] * I")
    return problems

"""Self-contained, seeded oracle checks behind ``ligo verify``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import growth, linalg
from . import ligo_operator as lg
from . import model as tfm
from .growth import GrowthSpec
from .linalg import make_rng, rel_err
from .model import ModelConfig

SUITES = ("algebra", "special-cases", "gradients", "net2net")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.suite:<14} {self.name:<44} {self.value:10.3e}  (tol {self.tolerance:.0e})"


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def _params_diff(a: tfm.ParamSet, b: tfm.ParamSet) -> float:
    if set(a.tensors) != set(b.tensors):
        return float("inf")
    return max(_max_abs(a[k], b[k]) for k in a.tensors)


def _tiny_configs(seed: int, L1=2, L2=4, D1=4, D2=6, heads=2, V=7, T=5):
    src = ModelConfig(L1, D1, heads, V, T, dtype="float64")
    tgt = ModelConfig(L2, D2, heads, V, T, dtype="float64")
    return src, tgt


def _perturbed(cfg, rng, scale=0.3):
    p = tfm.init_random(cfg, rng)
    return p.with_flat(p.flat() + scale * rng.standard_normal(p.flat().size))


# ---------------------------------------------------------------- algebra

def check_kron_identity(seed: int = 0) -> float:
    rng = make_rng(seed)
    A, B, W = rng.standard_normal((4, 2)), rng.standard_normal((5, 3)), rng.standard_normal((3, 2))
    return _max_abs(linalg.kron(A, B) @ linalg.vec(W), linalg.vec(B @ W @ A.T))


def check_kron_apply(seed: int = 0) -> float:
    rng = make_rng(seed)
    A, B, W = rng.standard_normal((6, 4)), rng.standard_normal((6, 4)), rng.standard_normal((4, 4))
    via_kron = linalg.unvec(linalg.kron(A, B) @ linalg.vec(W), 6, 6)
    return _max_abs(linalg.kron_apply(A, B, W), via_kron)


def check_dense_M(seed: int = 0, D1=3, D2=5, L1=2, L2=4) -> float:
    rng = make_rng(seed)
    p = lg.random_mlp_ligo(L1, L2, D1, D2, rng)
    theta = rng.standard_normal((L1, D1, D1))
    M = lg.assemble_dense_M(p)
    dense = M @ np.concatenate([linalg.vec(W) for W in theta])
    fact = np.concatenate([linalg.vec(W) for W in lg.mlp_ligo_expand_weights(theta, p)])
    return _max_abs(dense, fact)


def check_dense_structure(seed: int = 0, D1=3, D2=5, L1=2, L2=4) -> float:
    p = lg.random_mlp_ligo(L1, L2, D1, D2, make_rng(seed))
    Ld, R = lg.assemble_dense_factors(p)
    return float(len(lg.check_dense_structure(Ld, R, p)))


def check_dense_stacking(D=3, L1=2, L2=4, seed: int = 0) -> float:
    theta = make_rng(seed).standard_normal((L1, D, D))
    M = lg.assemble_dense_M(lg.mlp_ligo_from_stack(L1, L2, D))
    stacked = np.concatenate([linalg.vec(theta[l % L1]) for l in range(L2)])
    return _max_abs(M @ np.concatenate([linalg.vec(W) for W in theta]), stacked)


# ---------------------------------------------------------------- special cases

def check_from_stack(seed: int) -> float:
    rng = make_rng(seed)
    src = ModelConfig(2, 4, 2, 7, 5, dtype="float64")
    tgt = src.replace(num_layers=4 + 2 * (seed % 2))
    small = _perturbed(src, rng)
    ref = growth.grow_stack(small, GrowthSpec(src, tgt, "stack"))
    return _params_diff(lg.ligo_expand(small, lg.ligo_from_stack(src, tgt)), ref)


def check_from_interpolation(seed: int) -> float:
    rng = make_rng(seed)
    src = ModelConfig(2 + seed % 2, 4, 2, 7, 5, dtype="float64")
    tgt = src.replace(num_layers=2 * src.num_layers)
    small = _perturbed(src, rng)
    ref = growth.grow_interpolate(small, GrowthSpec(src, tgt, "interpolate"))
    return _params_diff(lg.ligo_expand(small, lg.ligo_from_interpolation(src, tgt)), ref)


def check_from_net2net(seed: int) -> float:
    rng = make_rng(1000 + seed)
    src = ModelConfig(2, 4, 2, 7, 5, dtype="float64")
    tgt = src.replace(hidden=6 + 2 * (seed % 2))
    small = _perturbed(src, rng)
    ref = growth.grow_net2net_width(small, GrowthSpec(src, tgt, "net2net", seed=seed))
    return _params_diff(lg.ligo_expand(small, lg.ligo_from_net2net(src, tgt, make_rng(seed))), ref)


def check_mlp_special_cases(seed: int) -> float:
    rng = make_rng(seed)
    mlp = growth.random_mlp(2, 3, rng)
    theta = mlp.weights
    errs = [
        _max_abs(lg.mlp_ligo_expand_weights(theta, lg.mlp_ligo_from_stack(2, 4, 3)), theta[[0, 1, 0, 1]]),
        _max_abs(lg.mlp_ligo_expand_weights(theta, lg.mlp_ligo_from_interpolation(2, 4, 3)), theta[[0, 0, 1, 1]]),
    ]
    grown = growth.grow_net2net_mlp(mlp, 5, rng)
    via = lg.mlp_ligo_expand(mlp, lg.mlp_ligo_from_net2net(grown.selections))
    errs += [_max_abs(via.weights, grown.mlp.weights), _max_abs(via.biases, grown.mlp.biases)]
    return max(errs)


# ---------------------------------------------------------------- gradients

def check_model_grad(seed: int = 0) -> float:
    rng = make_rng(seed)
    cfg = ModelConfig(1, 8, 2, 11, 4, dtype="float64")
    p = _perturbed(cfg, rng)
    x, y = rng.integers(0, cfg.vocab, (2, 4)), rng.integers(0, cfg.vocab, (2, 4))
    _, g = tfm.grad(p, x, y)
    analytic = np.concatenate([g[k].ravel() for k in p.tensors])
    fd = linalg.finite_diff_grad(lambda v: tfm.loss(tfm.forward(p.with_flat(v), x), y), p.flat())
    return rel_err(analytic, fd)


def check_ligo_grad(seed: int = 0) -> float:
    rng = make_rng(seed)
    src = ModelConfig(1, 4, 2, 7, 4, dtype="float64")
    tgt = ModelConfig(2, 6, 2, 7, 4, dtype="float64")
    small = _perturbed(src, rng)
    p0 = lg.ligo_init("stack_net2net", src, tgt, rng, noise=0.1)
    x, y = rng.integers(0, 7, (2, 4)), rng.integers(0, 7, (2, 4))
    _, g = lg.ligo_loss_and_grad(small, p0, x, y)
    analytic = np.concatenate([g[k].ravel() for k in p0.tensors])
    f = lambda v: tfm.loss(tfm.forward(lg.ligo_expand(small, p0.with_flat(v)), x), y)
    return rel_err(analytic, linalg.finite_diff_grad(f, p0.flat()))


# ---------------------------------------------------------------- net2net

def check_net2net_mlp(seed: int, D1: int, D2: int, n_inputs: int = 100) -> float:
    rng = make_rng(seed)
    mlp = growth.random_mlp(2, D1, rng)
    grown = growth.grow_net2net_mlp(mlp, D2, rng)
    x = rng.standard_normal((n_inputs, D1))
    return _max_abs(grown(x), growth.mlp_forward(mlp, x))


def run_suite(suite: str) -> List[CheckResult]:
    def mk(suite_name, name, value, tol):
        return CheckResult(suite_name, name, bool(value < tol), float(value), tol)

    out: List[CheckResult] = []
    if suite in ("algebra", "all"):
        out += [mk("algebra", "kron(A,B) vec(W) == vec(B W A^T)", check_kron_identity(), 1e-12),
                mk("algebra", "kron_apply == kron + vec path", check_kron_apply(), 1e-12),
                mk("algebra", "dense M vec(theta) == vec(expand)", check_dense_M(), 1e-12),
                mk("algebra", "dense factor block structure (violations)", check_dense_structure(), 0.5),
                mk("algebra", "dense M stacking == stacked vec", check_dense_stacking(), 1e-12)]
    if suite in ("special-cases", "all"):
        out += [mk("special-cases", "expand(from_stack) == grow_stack",
                   max(check_from_stack(s) for s in range(3)), 1e-12),
                mk("special-cases", "expand(from_interpolation) == grow_interpolate",
                   max(check_from_interpolation(s) for s in range(3)), 1e-12),
                mk("special-cases", "expand(from_net2net) == grow_net2net_width",
                   max(check_from_net2net(s) for s in range(3)), 1e-12),
                mk("special-cases", "MLP constructors == stack/interp/net2net",
                   max(check_mlp_special_cases(s) for s in range(3)), 1e-12)]
    if suite in ("gradients", "all"):
        out += [mk("gradients", "model grad vs finite differences", check_model_grad(), 1e-5),
                mk("gradients", "LiGO grad vs finite differences", check_ligo_grad(), 1e-5)]
    if suite in ("net2net", "all"):
        out += [mk("net2net", "MLP function preservation D 2->3",
                   max(check_net2net_mlp(s, 2, 3) for s in range(5)), 1e-12),
                mk("net2net", "MLP function preservation D 4->7",
                   max(check_net2net_mlp(s, 4, 7) for s in range(5)), 1e-12)]
    return out

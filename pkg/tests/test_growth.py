import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ligo import growth, model as tfm
from ligo.errors import SpecError
from ligo.growth import GrowthSpec
from ligo.linalg import make_rng
from ligo.model import ModelConfig

SRC = ModelConfig(2, 8, 2, 13, 6, dtype="float64")


def small(cfg=SRC, seed=0):
    r = make_rng(seed)
    p = tfm.init_random(cfg, r)
    return p.with_flat(p.flat() + 0.2 * r.standard_normal(p.flat().size))


def layer_ids(grown, src, L2):
    """Which source layer each grown layer equals, by exact comparison of the q weight."""
    out = []
    for l in range(L2):
        hits = [j for j in range(src.config.num_layers)
                if np.array_equal(grown.layer(l, "q"), src.layer(j, "q"))]
        out.append(hits[0] if len(hits) == 1 else None)
    return out


def test_spec_constraints():
    with pytest.raises(SpecError):
        GrowthSpec(SRC, SRC.replace(num_layers=3), "stack").depth_ratio
    with pytest.raises(SpecError):
        GrowthSpec(SRC, SRC.replace(num_layers=1), "stack")
    with pytest.raises(SpecError):
        GrowthSpec(SRC, SRC.replace(vocab=14), "stack")
    with pytest.raises(SpecError):
        GrowthSpec(SRC, SRC, "bogus")
    with pytest.raises(SpecError):
        growth.grow_stack(small(), GrowthSpec(SRC, SRC.replace(num_layers=4, hidden=12), "stack"))
    with pytest.raises(SpecError):
        growth.grow_net2net_width(small(), GrowthSpec(SRC, SRC.replace(num_layers=4, hidden=12), "net2net"))


@pytest.mark.parametrize("L2,expected", [(4, [0, 1, 0, 1]), (6, [0, 1, 0, 1, 0, 1])])
def test_stack_order(L2, expected):
    p = small()
    g = growth.grow_stack(p, GrowthSpec(SRC, SRC.replace(num_layers=L2), "stack"))
    assert layer_ids(g, p, L2) == expected


@pytest.mark.parametrize("L1,L2,expected", [(2, 4, [0, 0, 1, 1]), (3, 6, [0, 0, 1, 1, 2, 2])])
def test_interpolate_order(L1, L2, expected):
    src = SRC.replace(num_layers=L1)
    p = small(src)
    g = growth.grow_interpolate(p, GrowthSpec(src, src.replace(num_layers=L2), "interpolate"))
    assert layer_ids(g, p, L2) == expected


@pytest.mark.parametrize("op", ["stack", "interpolate", "net2net", "copy"])
def test_identity_growth(op):
    p = small()
    g = growth.grow(p, GrowthSpec(SRC, SRC, op))
    assert all(np.array_equal(g[k], p[k]) for k in p.tensors)


def test_stacked_layers_are_copies():
    g = growth.grow_stack(small(), GrowthSpec(SRC, SRC.replace(num_layers=4), "stack"))
    g.layer(0, "q")[0, 0] += 1
    assert g.layer(0, "q")[0, 0] != g.layer(2, "q")[0, 0]


def test_selection_matrix():
    S = growth.random_selection(4, 9, make_rng(0))
    assert S.shape == (4, 5)
    assert np.all(S.sum(axis=0) == 1)
    assert np.all(growth.replica_counts(S) >= 1)
    assert growth.selection_index(S)[:4].tolist() == [0, 1, 2, 3]


def test_net2net_single_replica_halves_rows():
    S = np.array([[1.0], [0.0]])                 # unit 0 copied once
    assert growth.replica_counts(S).tolist() == [2.0, 1.0]
    w = np.array([[2.0, 4.0], [6.0, 8.0]])
    wide = growth.net2net_widen(w, S, None)
    assert wide.tolist() == [[1.0, 2.0], [6.0, 8.0], [1.0, 2.0]]


def test_net2net_mlp_preservation_fixed_seed():
    r = make_rng(0)
    mlp = growth.random_mlp(2, 2, r)
    big = growth.grow_net2net_mlp(mlp, 3, r)
    x = r.standard_normal((100, 2))
    assert np.max(np.abs(big(x) - growth.mlp_forward(mlp, x))) < 1e-12
    x32 = x.astype(np.float32)
    m32 = growth.Mlp(mlp.weights.astype(np.float32), mlp.biases.astype(np.float32))
    b32 = growth.GrownMlp(growth.Mlp(big.mlp.weights.astype(np.float32), big.mlp.biases.astype(np.float32)),
                          big.selections)
    assert np.max(np.abs(b32(x32) - growth.mlp_forward(m32, x32))) < 1e-6


@settings(max_examples=25, deadline=None)
@given(d1=st.integers(1, 6), extra=st.integers(0, 6), layers=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_net2net_mlp_preservation_property(d1, extra, layers, seed):
    r = make_rng(seed)
    mlp = growth.random_mlp(layers, d1, r)
    big = growth.grow_net2net_mlp(mlp, d1 + extra, r)
    x = r.standard_normal((20, d1))
    assert np.max(np.abs(big(x) - growth.mlp_forward(mlp, x))) < 1e-11


@pytest.mark.parametrize("norm", ["sqrt", "none", "split"])
def test_tied_factor_structure(norm):
    S = growth.random_selection(5, 9, make_rng(1))
    F = growth.tied_factor(S, norm)
    assert F.shape == (9, 5)
    assert np.array_equal(np.count_nonzero(F, axis=1), np.ones(9))
    assert np.array_equal(F[:5] != 0, np.eye(5, dtype=bool))
    if norm == "sqrt":
        assert np.max(np.abs(F.T @ F - np.eye(5))) < 1e-12


def test_net2net_width_preserves_linear_paths():
    """With F^T F = I the widened q map sends F x to F (W x)."""
    tgt = SRC.replace(hidden=14)
    p = small()
    g = growth.grow_net2net_width(p, GrowthSpec(SRC, tgt, "net2net", seed=3))
    F = growth.tied_factor(growth.draw_selections(SRC, tgt, make_rng(3)).emb)
    x = make_rng(9).standard_normal(8)
    assert np.max(np.abs(g.layer(0, "q") @ (F @ x) - F @ (p.layer(0, "q") @ x))) < 1e-12


def test_net2net_width_is_seeded():
    tgt = SRC.replace(hidden=14)
    p = small()
    a = growth.grow_net2net_width(p, GrowthSpec(SRC, tgt, "net2net", seed=1))
    b = growth.grow_net2net_width(p, GrowthSpec(SRC, tgt, "net2net", seed=1))
    c = growth.grow_net2net_width(p, GrowthSpec(SRC, tgt, "net2net", seed=2))
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert any(not np.array_equal(a[k], c[k]) for k in a.tensors)


def test_copy_leading_block_and_determinism():
    tgt = SRC.replace(hidden=12)
    p = small()
    a = growth.grow_copy(p, GrowthSpec(SRC, tgt, "copy", seed=4))
    b = growth.grow_copy(p, GrowthSpec(SRC, tgt, "copy", seed=4))
    for name, t in p.items():
        assert np.array_equal(a[name][tuple(slice(0, s) for s in t.shape)], t), name
        assert np.array_equal(a[name], b[name])
    assert np.all(a.layer(0, "ln1", "gain")[8:] == 1)
    assert np.all(a.layer(0, "q", "bias")[8:] == 0)


def test_grow_composes_width_then_depth():
    tgt = SRC.replace(num_layers=4, hidden=12)
    p = small()
    both = growth.grow(p, GrowthSpec(SRC, tgt, "stack", seed=5))
    wide = growth.grow_net2net_width(p, GrowthSpec(SRC, SRC.replace(hidden=12), "net2net", seed=5))
    manual = growth.grow_stack(wide, GrowthSpec(wide.config, tgt, "stack"))
    assert all(np.array_equal(both[k], manual[k]) for k in both.tensors)
    assert both.config == tgt
    with pytest.raises(SpecError):
        growth.grow(p, GrowthSpec(SRC, tgt, "ligo"))


def test_grow_keeps_dtype():
    p32 = small().astype("float32")
    g = growth.grow(p32, GrowthSpec(p32.config, p32.config.replace(num_layers=4, hidden=12), "net2net"))
    assert all(v.dtype == np.float32 for _, v in g.items())

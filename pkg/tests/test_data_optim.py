import numpy as np
import pytest

from ligo.data import eval_batches, load_corpus, sample_batch, synthetic_text
from ligo.errors import ConfigError, DataError
from ligo.linalg import make_rng
from ligo.optim import Adam, OptimizerConfig, SGD, make_optimizer


def test_synthetic_reproducible():
    a = load_corpus("synthetic:seed=2,bytes=5000")
    b = load_corpus("synthetic:seed=2,bytes=5000")
    assert a.text == b.text and len(a.text) == 5000
    assert load_corpus("synthetic:seed=3,bytes=5000").text != a.text


def test_synthetic_default_size():
    assert len(synthetic_text(0)) == 1_000_000


def test_file_corpus_ascii_vocab_and_roundtrip(tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("the quick brown fox jumps over the lazy dog\n" * 40)
    c = load_corpus(f)
    assert c.vocab_size <= 128
    assert c.detokenize(c.tokenize(c.text)) == c.text
    assert len(c.train) + len(c.eval) == len(c.tokens)
    b = load_corpus(f, "byte")
    assert b.vocab_size == 256


def test_missing_and_bad_corpus(tmp_path):
    with pytest.raises(DataError, match="nope.txt"):
        load_corpus(tmp_path / "nope.txt")
    with pytest.raises(DataError):
        load_corpus("synthetic:flavour=1")
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(DataError):
        load_corpus(tmp_path / "e.txt")
    with pytest.raises(DataError):
        load_corpus("synthetic:bytes=5000").tokenize("é")


def test_batches_are_shifted_windows():
    data = np.arange(100)
    x, y = sample_batch(data, 3, 8, make_rng(0))
    assert x.shape == y.shape == (3, 8)
    assert np.array_equal(y, x + 1)
    ev1, ev2 = eval_batches(data, 2, 8, 3), eval_batches(data, 2, 8, 3)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(ev1, ev2))
    with pytest.raises(DataError):
        sample_batch(np.arange(5), 1, 8, make_rng(0))


def test_lr_warmup():
    cfg = OptimizerConfig(lr=1.0, warmup_steps=4)
    assert [cfg.lr_at(s) for s in (1, 2, 4, 10)] == [0.25, 0.5, 1.0, 1.0]
    with pytest.raises(ConfigError):
        OptimizerConfig(lr=-1)


def test_sgd_step():
    p = {"w": np.array([1.0, 2.0])}
    SGD(OptimizerConfig("sgd", lr=0.5), p).step({"w": np.array([1.0, -2.0])}, 1)
    assert p["w"].tolist() == [0.5, 3.0]


def test_adam_minimizes_quadratic():
    p = {"w": np.array([3.0, -2.0])}
    opt = make_optimizer(OptimizerConfig("adam", lr=0.1), p)
    assert isinstance(opt, Adam)
    for s in range(1, 500):
        opt.step({"w": 2 * p["w"]}, s)
    assert np.max(np.abs(p["w"])) < 1e-2


def test_adam_first_step_magnitude():
    # bias correction makes the first update lr * sign(g)
    p = {"w": np.array([0.0, 0.0])}
    Adam(OptimizerConfig("adam", lr=0.01), p).step({"w": np.array([5.0, -1e-3])}, 1)
    assert np.allclose(p["w"], [-0.01, 0.01], rtol=1e-4)

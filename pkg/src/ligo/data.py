"""Character-level corpora and batch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .errors import DataError
from .linalg import make_rng

TRAIN_FRACTION = 0.9
SYNTHETIC_BYTES = 1_000_000
_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class Corpus:
    text: str
    vocab: str              # symbol of token id i is vocab[i]
    tokens: np.ndarray      # int64 ids of the whole text
    split: int              # tokens[:split] train, tokens[split:] eval

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def train(self) -> np.ndarray:
        return self.tokens[:self.split]

    @property
    def eval(self) -> np.ndarray:
        return self.tokens[self.split:]

    def tokenize(self, text: str) -> np.ndarray:
        lut = {ch: i for i, ch in enumerate(self.vocab)}
        try:
            return np.array([lut[ch] for ch in text], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"symbol {e.args[0]!r} is not in the vocabulary") from None

    def detokenize(self, ids) -> str:
        return "".join(self.vocab[i] for i in np.asarray(ids).ravel())


def synthetic_text(seed: int = 0, size: int = SYNTHETIC_BYTES, n_words: int = 600,
                   fanout: int = 6) -> str:
    """Seeded Markov text: a random lexicon joined by a sparse word-bigram chain.

    Output is ASCII, exactly ``size`` characters long. Long-range structure
    (spelling plus word transitions) keeps a character model improving
    well past its first few hundred steps.
    """
    rng = make_rng(seed)
    lengths = rng.integers(2, 9, size=n_words)
    letters = rng.integers(0, len(_ALPHABET), size=int(lengths.sum()))
    words, pos = [], 0
    for n in lengths:
        words.append("".join(_ALPHABET[c] for c in letters[pos:pos + n]))
        pos += n
    succ = rng.integers(0, n_words, size=(n_words, fanout))
    probs = rng.dirichlet(np.full(fanout, 0.5), size=n_words)
    cum = np.cumsum(probs, axis=1)
    n_est = size // 4 + 16
    u = rng.random(n_est)
    ends = rng.random(n_est)
    out: List[str] = []
    total, w, i = 0, int(rng.integers(n_words)), 0
    while total < size:
        if i == n_est:
            u, ends, i = rng.random(n_est), rng.random(n_est), 0
        tok = words[w]
        e = ends[i]
        sep = ".\n" if e < 0.02 else (". " if e < 0.12 else " ")
        out.append(tok + sep)
        total += len(tok) + len(sep)
        w = int(succ[w, min(int(np.searchsorted(cum[w], u[i])), fanout - 1)])
        i += 1
    return "".join(out)[:size]


def _parse_synthetic(spec: str) -> dict:
    opts = {"seed": 0, "bytes": SYNTHETIC_BYTES}
    _, _, rest = spec.partition(":")
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        if k not in opts:
            raise DataError(f"unknown synthetic corpus option {k!r} in {spec!r}")
        try:
            opts[k] = int(v)
        except ValueError:
            raise DataError(f"bad value {v!r} for {k} in {spec!r}") from None
    if opts["bytes"] < 100:
        raise DataError("synthetic corpus needs at least 100 bytes")
    return opts


def load_corpus(source: Union[str, Path], vocab_mode: str = "char") -> Corpus:
    """Load a text file, or build ``synthetic[:seed=N,bytes=M]``.

    ``vocab_mode='char'`` maps the sorted set of characters to ids;
    ``'byte'`` uses the 256 byte values of the UTF-8 encoding (the text is
    then held as latin-1 so ``detokenize`` stays a character join).
    """
    src = str(source)
    if src == "synthetic" or src.startswith("synthetic:"):
        o = _parse_synthetic(src)
        text = synthetic_text(o["seed"], o["bytes"])
    else:
        path = Path(src)
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise DataError(f"cannot read corpus {path}: {e}") from None
    if not text:
        raise DataError(f"corpus {src} is empty")
    if vocab_mode == "byte":
        text = text.encode("utf-8").decode("latin-1")
        vocab = "".join(chr(i) for i in range(256))
    elif vocab_mode == "char":
        vocab = "".join(sorted(set(text)))
    else:
        raise DataError(f"unknown vocab mode {vocab_mode!r}")
    lut = np.zeros(max(map(ord, vocab)) + 1, dtype=np.int64)
    lut[[ord(c) for c in vocab]] = np.arange(len(vocab))
    codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    tokens = lut[codes]
    split = int(len(tokens) * TRAIN_FRACTION)
    if len(tokens) - split < 2:
        raise DataError(f"corpus {src} too small for an eval split")
    return Corpus(text, vocab, tokens, split)


def sample_batch(data: np.ndarray, batch_size: int, seq: int,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if len(data) < seq + 1:
        raise DataError(f"split of {len(data)} tokens is shorter than seq+1={seq + 1}")
    starts = rng.integers(0, len(data) - seq, size=batch_size)
    idx = starts[:, None] + np.arange(seq + 1)[None, :]
    win = data[idx]
    return win[:, :-1], win[:, 1:]


def batch_stream(data: np.ndarray, batch_size: int, seq: int,
                 rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    while True:
        yield sample_batch(data, batch_size, seq, rng)


def eval_batches(data: np.ndarray, batch_size: int, seq: int, n_batches: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Fixed, evenly spaced windows over ``data``; identical on every call."""
    if len(data) < seq + 1:
        raise DataError(f"eval split of {len(data)} tokens is shorter than seq+1={seq + 1}")
    n = batch_size * n_batches
    starts = np.linspace(0, len(data) - seq - 1, n).astype(np.int64)
    idx = starts[:, None] + np.arange(seq + 1)[None, :]
    win = data[idx]
    return [(win[i * batch_size:(i + 1) * batch_size, :-1], win[i * batch_size:(i + 1) * batch_size, 1:])
            for i in range(n_batches)]

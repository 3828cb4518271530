"""Dense matrix helpers and the Kronecker/vectorization identities.

Matrices are plain 2-D numpy arrays (row-major storage). The *math*
convention for ``vec`` is column-major: columns are stacked top to bottom,
which is the convention under which

    vec(C @ X @ B) == kron(B.T, C) @ vec(X)

holds. Storage order and vec order are independent; only ``vec``/``unvec``
care about the latter.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError, SizeError

KRON_CAP = 10**6


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the stream is platform independent."""
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} produced non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _check_finite(a @ b, "matmul")


def vec(w) -> np.ndarray:
    return _as_2d(w).reshape(-1, order="F").copy()


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise ShapeError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return np.ascontiguousarray(v.reshape(rows, cols, order="F"))


def kron(a, b, cap: int = KRON_CAP) -> np.ndarray:
    """Materialized Kronecker product. Only meant for verification-sized inputs."""
    a, b = _as_2d(a), _as_2d(b)
    n = a.shape[0] * b.shape[0] * a.shape[1] * b.shape[1]
    if n > cap:
        raise SizeError(f"kron of {a.shape} and {b.shape} has {n} entries (cap {cap})")
    return np.kron(a, b)


def kron_apply(a, b, w) -> np.ndarray:
    """Return ``b @ w @ a.T``, i.e. ``unvec(kron(a, b) @ vec(w))`` without forming the product."""
    a, b, w = _as_2d(a), _as_2d(b), _as_2d(w)
    if b.shape[1] != w.shape[0] or a.shape[1] != w.shape[1]:
        raise ShapeError(f"kron_apply shape mismatch: a {a.shape}, b {b.shape}, w {w.shape}")
    return _check_finite(b @ w @ a.T, "kron_apply")


def block_diag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=np.result_type(*blocks))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        fp = float(f(x))
        x[i] = old - eps
        fm = float(f(x))
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    """Max-norm relative error; ``floor`` bounds the denominator for all-zero references."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)

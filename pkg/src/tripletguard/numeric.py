"""Dense float64 kernels, seeded randomness and a finite-difference oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The products
here accumulate over the inner dimension in a fixed left-to-right order so
results never depend on the BLAS build or its thread count.
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class NumericError(ArithmeticError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the same seed yields the same stream on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    # one rank-1 update per inner index keeps the row-major summation order
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return np.add(a, b, dtype=np.float64)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return np.subtract(a, b, dtype=np.float64)


def scale(a: np.ndarray, alpha: float) -> np.ndarray:
    return np.multiply(a, alpha, dtype=np.float64)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow or log(0) for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ValueError("glorot_init needs positive dimensions")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept entries carry 1/(1-rate), dropped ones 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def block_diag_apply(blocks: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multiply each row of ``x`` by the block-diagonal matrix built from ``blocks``.

    ``blocks`` has shape (n_blocks, size, size); row ``v`` of the result equals
    ``dense @ v`` with ``dense`` the materialised block-diagonal matrix.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    x = as_matrix(x)
    nb, size, size2 = blocks.shape
    if size != size2 or nb * size != x.shape[1]:
        raise ValueError(f"blocks {blocks.shape} do not fit rows of width {x.shape[1]}")
    xb = x.reshape(x.shape[0], nb, size)
    out = np.zeros_like(xb)
    for k in range(size):
        out += xb[:, :, k, None] * blocks[None, :, :, k]
    return out.reshape(x.shape)


def block_diag_dense(blocks: np.ndarray) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    nb, size, _ = blocks.shape
    dense = np.zeros((nb * size, nb * size))
    for b in range(nb):
        dense[b * size:(b + 1) * size, b * size:(b + 1) * size] = blocks[b]
    return dense


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate."""
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = float(f(x))
        x[i] = orig - h
        fm = float(f(x))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad

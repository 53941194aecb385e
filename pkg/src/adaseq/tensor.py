"""Dense float64 kernels shared by every other module.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Vectors may be
1-D; batched quantities carry the batch on the leading axis.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, message, *shapes):
        self.shapes = shapes
        super().__init__(f"{message}: {' vs '.join(str(s) for s in shapes)}")


def as_tensor(x) -> np.ndarray:
    """Float arrays keep their precision; anything else becomes float64."""
    a = np.asarray(x)
    return a if a.dtype.kind == "f" else a.astype(DTYPE)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise DimensionError("matmul shape mismatch", a.shape, b.shape)
    return a @ b


def sigmoid(x) -> np.ndarray:
    # exp of a non-positive argument only, so nothing overflows
    x = as_tensor(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x) -> np.ndarray:
    return np.tanh(as_tensor(x))


def _check_same(a, b):
    if a.shape != b.shape:
        raise DimensionError("elementwise shape mismatch", a.shape, b.shape)


def mul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return a * b


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return a - b


def scale(a, c: float) -> np.ndarray:
    return as_tensor(a) * float(c)


def add_bias(x, bias) -> np.ndarray:
    """Add a length-``cols`` bias vector to every row of ``x``."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError("bias shape mismatch", x.shape, bias.shape)
    return x + bias


def init_params(rows: int, cols: int, seed, scheme: str = "uniform") -> np.ndarray:
    """Seeded ``rows x cols`` initialisation.

    ``"uniform"`` draws from U[-s, s] with ``s = 1/sqrt(cols)``; ``"zeros"``
    returns zeros. ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got ({rows}, {cols})")
    if scheme == "zeros":
        return np.zeros((rows, cols), dtype=DTYPE)
    if scheme != "uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    s = 1.0 / np.sqrt(cols)
    rng = np.random.default_rng(seed)
    return rng.uniform(-s, s, size=(rows, cols)).astype(DTYPE, copy=False)

"""LSTM cell and the portion-gated partial-update cell.

Row-vector convention throughout: a hidden state is a length-D row ``h`` and a
gate pre-activation is ``h @ W_f + x @ U_f + b_f``. The four gate blocks are
stored side by side in ``W`` and ``U`` (each D x 4D) in the order f, i, o, C.

Internally a state travels as one packed (B, 2D) array ``[C | h]``; the
public functions accept and return :class:`CellState` with 1-D or (B, D)
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var, value_of
from .tensor import DTYPE, DimensionError, init_params
from .tensor import sigmoid as _sigmoid

GATES = ("f", "i", "o", "C")


class ContractError(RuntimeError):
    """An operation was called on a cell that cannot support it."""


@dataclass(frozen=True)
class MaskConstants:
    epsilon: float = 0.01
    sharpness: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if not self.sharpness > 0:
            raise ValueError(f"sharpness must be positive, got {self.sharpness}")


@dataclass
class CellState:
    C: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, size, batch=None):
        shape = (size,) if batch is None else (batch, size)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


@dataclass
class CellParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    w_p: np.ndarray | None = None
    u_p: np.ndarray | None = None
    b_p: np.ndarray | None = None

    def __post_init__(self):
        d = self.W.shape[0]
        if self.W.shape != (d, 4 * d) or self.U.shape != (d, 4 * d) or self.b.shape != (4 * d,):
            raise DimensionError("cell parameter shapes", self.W.shape, self.U.shape, self.b.shape)
        gate_parts = (self.w_p, self.u_p, self.b_p)
        if any(x is None for x in gate_parts) != all(x is None for x in gate_parts):
            raise ValueError("portion-gate parameters must be all present or all absent")
        if self.has_portion_gate:
            if self.w_p.shape != (d, 1) or self.u_p.shape != (d, 1) or self.b_p.shape != (1,):
                raise DimensionError("portion gate shapes", self.w_p.shape, self.u_p.shape, self.b_p.shape)

    @property
    def size(self) -> int:
        return self.W.shape[0]

    @property
    def has_portion_gate(self) -> bool:
        return self.w_p is not None

    @classmethod
    def zeros(cls, size: int, portion_gate: bool = False) -> CellParams:
        z = lambda *shape: np.zeros(shape, dtype=DTYPE)  # noqa: E731
        gate = (z(size, 1), z(size, 1), z(1)) if portion_gate else (None, None, None)
        return cls(z(size, 4 * size), z(size, 4 * size), z(4 * size), *gate)

    @classmethod
    def init(cls, size: int, seed, portion_gate: bool = False) -> CellParams:
        """Uniform init with fan-in scaling; all biases start at zero."""
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_w, s_u, s_wp, s_up = seq.spawn(4)
        # generated as (out, in) so the scale is 1/sqrt(fan_in), then transposed
        W = init_params(4 * size, size, s_w).T.copy()
        U = init_params(4 * size, size, s_u).T.copy()
        b = np.zeros(4 * size, dtype=DTYPE)
        if not portion_gate:
            return cls(W, U, b)
        w_p = init_params(1, size, s_wp).T.copy()
        u_p = init_params(1, size, s_up).T.copy()
        return cls(W, U, b, w_p, u_p, np.zeros(1, dtype=DTYPE))

    def tensors(self) -> dict:
        out = {"W": self.W, "U": self.U, "b": self.b}
        if self.has_portion_gate:
            out.update(w_p=self.w_p, u_p=self.u_p, b_p=self.b_p)
        return out

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def gate(self, name: str):
        """Return the (W, U, b) views of one gate, e.g. ``gate("f")``."""
        k = GATES.index(name)
        d = self.size
        sl = slice(k * d, (k + 1) * d)
        return self.W[:, sl], self.U[:, sl], self.b[sl]


def _check_dims(params, *vectors):
    d = params.size
    for v in vectors:
        if v is not None and value_of(v).shape[-1] != d:
            raise DimensionError("cell input dimension", value_of(v).shape, (d,))


# -- tape-level cell bodies ---------------------------------------------------
# ``P`` maps parameter names to Vars (or raw arrays), ``state`` is a packed
# (B, 2D) [C | h] value and ``h`` its hidden half. ``x=None`` is a zero input.


def lstm_cell(tape: Tape, P, state, h, x, size: int):
    pairs = [(h, P["W"])]
    if x is not None:
        pairs.append((x, P["U"]))
    pre = tape.affine(pairs, P["b"])
    gates = tape.lstm_activate(pre)
    new = tape.lstm_combine(gates, tape.columns(state, 0, size))
    return new, tape.columns(new, size, 2 * size)


def portion_cell(tape: Tape, P, h, x):
    pairs = [(h, P["w_p"])]
    if x is not None:
        pairs.append((x, P["u_p"]))
    return tape.sigmoid(tape.affine(pairs, P["b_p"]))


def da_cell(tape: Tape, P, state, h, x, size: int, mask: MaskConstants, override=None):
    """One partial-update step. Returns ``(state, h, p, e)``.

    ``override`` replaces the soft mask by a fixed array (tests and
    reductions use all-ones / all-zeros); ``p`` is still computed.
    """
    p = portion_cell(tape, P, h, x)
    if override is None:
        e = tape.soft_mask(p, size, mask.sharpness, mask.epsilon)
    else:
        e = Var(np.broadcast_to(np.asarray(override, dtype=DTYPE), value_of(h).shape).copy())
    h_star = tape.mul(h, e)
    x_star = None if x is None else tape.mul(x, e)
    pairs = [(h_star, P["W"])]
    if x_star is not None:
        pairs.append((x_star, P["U"]))
    pre = tape.affine(pairs, P["b"])
    gates = tape.lstm_activate(pre)
    new = tape.lstm_combine(gates, tape.columns(state, 0, size))
    out = tape.blend(e, new, state)
    return out, tape.columns(out, size, 2 * size), p, e


# -- public single-step API ---------------------------------------------------


def _batched(v):
    v = np.asarray(v, dtype=DTYPE)
    return (v[None, :], True) if v.ndim == 1 else (v, False)


def _pack(prev: CellState):
    c, squeeze = _batched(prev.C)
    h, _ = _batched(prev.h)
    if c.shape != h.shape:
        raise DimensionError("state halves", c.shape, h.shape)
    return np.concatenate([c, h], axis=1), h, squeeze


def _unpack(state, size, squeeze) -> CellState:
    state = value_of(state)
    c, h = state[:, :size], state[:, size:]
    if squeeze:
        c, h = c[0], h[0]
    return CellState(c.copy(), h.copy())


def lstm_step(params: CellParams, prev: CellState, x) -> CellState:
    """Vanilla LSTM update without peepholes."""
    _check_dims(params, prev.C, prev.h, x)
    state, h, squeeze = _pack(prev)
    xb, _ = _batched(x)
    new, _ = lstm_cell(Tape(record=False), params.tensors(), state, h, xb, params.size)
    return _unpack(new, params.size, squeeze)


def portion_gate(params: CellParams, prev_h, x):
    """Scalar portion ``p`` in (0, 1) from the unmasked ``h_{t-1}`` and ``x_t``.

    Returns a float for 1-D inputs and a (B,) array for batched ones.
    """
    if not params.has_portion_gate:
        raise ContractError("cell has no portion gate")
    _check_dims(params, prev_h, x)
    h, squeeze = _batched(prev_h)
    xb, _ = _batched(x)
    p = portion_cell(Tape(record=False), params.tensors(), h, xb).value[:, 0]
    return float(p[0]) if squeeze else p


def thres(x, epsilon: float):
    """0 below ``epsilon``, 1 above ``1 - epsilon``, identity in between."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.where(x < epsilon, 0.0, np.where(x > 1.0 - epsilon, 1.0, x))
    return float(out) if out.ndim == 0 else out


def soft_mask(p, size: int, mask: MaskConstants) -> np.ndarray:
    """Soft truncation mask of length ``size`` (or (B, size) for batched ``p``)."""
    p = np.asarray(p, dtype=DTYPE)
    scalar = p.ndim == 0
    idx = np.arange(1, size + 1, dtype=DTYPE)
    s = _sigmoid(mask.sharpness * (p.reshape(-1, 1) * size - idx))
    e = thres(s, mask.epsilon)
    return e[0] if scalar else e


def da_step(params: CellParams, prev: CellState, x, mask: MaskConstants, override=None):
    """Portion-gated partial update.

    Returns ``(state, p, e)``. Dimensions where ``e`` is 0 are copied through
    unchanged for both memory and hidden state.
    """
    if not params.has_portion_gate:
        raise ContractError("cell has no portion gate")
    _check_dims(params, prev.C, prev.h, x)
    state, h, squeeze = _pack(prev)
    xb, _ = _batched(x)
    out, _, p, e = da_cell(Tape(record=False), params.tensors(), state, h, xb, params.size, mask, override)
    p, e = value_of(p)[:, 0], value_of(e)
    if squeeze:
        return _unpack(out, params.size, True), float(p[0]), e[0].copy()
    return _unpack(out, params.size, False), p, e

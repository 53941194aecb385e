"""Wiring cells into the hierarchical model and the two fixed-depth baselines.

``da_lstm``
    Bottom chain B_1..B_m evaluated every step plus one top cell T. B_1 reads
    the projected input and the previous step's B_m state; T reads h(B_1);
    B_m reads the chain and h(T). Every cell carries a portion gate.
``stacked_lstm``
    m layers, layer k reads layer k-1's hidden output at the same step.
``deep_transition_lstm``
    m cells chained inside each step, the last one's state carried forward.

All three share an input projection to D and an affine output map to class
logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, Var, value_of
from .cells import CellParams, CellState, MaskConstants, da_cell, lstm_cell
from .tensor import DTYPE, DimensionError, init_params

ARCHS = ("da_lstm", "stacked_lstm", "deep_transition_lstm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "da_lstm"
    hidden_size: int = 40
    num_cells: int = 3
    input_dim: int = 52
    num_classes: int = 26
    mask: MaskConstants = field(default_factory=MaskConstants)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.mask, dict):
            object.__setattr__(self, "mask", MaskConstants(**self.mask))
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.hidden_size < 1 or self.num_cells < 1:
            raise ConfigError("hidden_size and num_cells must be >= 1")
        if self.arch == "da_lstm" and self.num_cells < 2:
            raise ConfigError("da_lstm needs num_cells >= 2 (B_1 and B_m must be distinct)")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim must be >= 1 and num_classes >= 2")

    @property
    def gated(self) -> bool:
        return self.arch == "da_lstm"

    @property
    def cells_per_step(self) -> int:
        return self.num_cells + (1 if self.arch == "da_lstm" else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def expected_param_count(config: ModelConfig) -> int:
    D, K = config.hidden_size, config.num_classes
    per_cell = 8 * D * D + 4 * D + (2 * D + 1 if config.gated else 0)
    return config.input_dim * D + D + config.cells_per_step * per_cell + D * K + K


@dataclass
class ModelParams:
    W_in: np.ndarray
    b_in: np.ndarray
    bottom: list
    top: CellParams | None
    W_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, config: ModelConfig) -> ModelParams:
        D, K = config.hidden_size, config.num_classes
        seeds = np.random.SeedSequence(config.seed).spawn(config.num_cells + 3)
        W_in = init_params(D, config.input_dim, seeds[0]).T.copy()
        W_out = init_params(K, D, seeds[1]).T.copy()
        bottom = [CellParams.init(D, s, portion_gate=config.gated) for s in seeds[3:]]
        top = CellParams.init(D, seeds[2], portion_gate=True) if config.gated else None
        return cls(W_in, np.zeros(D, DTYPE), bottom, top, W_out, np.zeros(K, DTYPE))

    @classmethod
    def zeros(cls, config: ModelConfig) -> ModelParams:
        D, K = config.hidden_size, config.num_classes
        bottom = [CellParams.zeros(D, config.gated) for _ in range(config.num_cells)]
        top = CellParams.zeros(D, True) if config.gated else None
        return cls(
            np.zeros((config.input_dim, D)), np.zeros(D), bottom, top, np.zeros((D, K)), np.zeros(K)
        )

    def named_tensors(self) -> dict:
        """Ordered ``name -> array`` view of every parameter (arrays are shared, not copied)."""
        out = {"input.W": self.W_in, "input.b": self.b_in}
        for k, cell in enumerate(self.bottom):
            for name, t in cell.tensors().items():
                out[f"bottom.{k}.{name}"] = t
        if self.top is not None:
            for name, t in self.top.tensors().items():
                out[f"top.{name}"] = t
        out["output.W"] = self.W_out
        out["output.b"] = self.b_out
        return out

    def count(self) -> int:
        return sum(t.size for t in self.named_tensors().values())

    def copy(self) -> ModelParams:
        return ModelParams.from_tensors({k: v.copy() for k, v in self.named_tensors().items()})

    def load_(self, tensors: dict):
        """Overwrite parameters in place from a ``name -> array`` mapping."""
        own = self.named_tensors()
        if own.keys() != tensors.keys():
            raise KeyError("parameter names differ")
        for k, v in own.items():
            v[...] = tensors[k]

    @classmethod
    def from_tensors(cls, tensors: dict) -> ModelParams:
        def cell(prefix):
            parts = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            return CellParams(**parts)

        n_bottom = len({k.split(".")[1] for k in tensors if k.startswith("bottom.")})
        bottom = [cell(f"bottom.{k}.") for k in range(n_bottom)]
        top = cell("top.") if any(k.startswith("top.") for k in tensors) else None
        return cls(
            tensors["input.W"], tensors["input.b"], bottom, top, tensors["output.W"], tensors["output.b"]
        )


@dataclass
class StepTrace:
    """Per-cell portion values, masks and effective multiplications for one step.

    Cells are listed in evaluation order (for da_lstm: B_1, T, B_2, ..., B_m).
    Ungated cells have ``p = None``.
    """

    p: list
    e: list
    mults: list


# -- tape-level network --------------------------------------------------------


def _cell_vars(P: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in P.items() if k.startswith(prefix)}


class Unroller:
    """Runs a whole (B, n, input_dim) batch through one architecture on a tape.

    ``P`` maps tensor names to tape leaves (or raw arrays for evaluation only).
    After :meth:`run`, ``portions`` is an (n, cells, B) array of portion values
    (da_lstm only) and ``masks`` optionally holds the per-step mask values.
    """

    def __init__(self, config: ModelConfig, tape: Tape, P: dict, override=None, keep_masks=False):
        self.config = config
        self.tape = tape
        self.P = P
        self.override = override
        self.keep_masks = keep_masks
        self.size = config.hidden_size
        self.dtype = value_of(P["input.W"]).dtype
        self.bottom = [_cell_vars(P, f"bottom.{k}.") for k in range(config.num_cells)]
        self.top = _cell_vars(P, "top.") if config.gated else None

    def _project(self, x_raw):
        return self.tape.affine([(x_raw, self.P["input.W"])], self.P["input.b"])

    def _logits(self, h):
        return self.tape.affine([(h, self.P["output.W"])], self.P["output.b"])

    def initial(self, batch: int):
        z = np.zeros((batch, 2 * self.size), dtype=self.dtype)
        st = Var(z)
        h = Var(z[:, self.size :])
        if self.config.arch == "stacked_lstm":
            return [(st, h) for _ in range(self.config.num_cells)]
        if self.config.arch == "da_lstm":
            return (st, h), (st, h)
        return (st, h)

    def _da(self, cell, state, h, x):
        return da_cell(self.tape, cell, state, h, x, self.size, self.config.mask, self.override)

    def step(self, carry, x_raw):
        """Advance one time step. Returns ``(carry, logits, portions, masks)``."""
        tape, D = self.tape, self.size
        x = self._project(x_raw)
        arch = self.config.arch
        if arch == "da_lstm":
            (bs, bh), (ts, th) = carry
            ps, es = [], []
            s1, h1, p, e = self._da(self.bottom[0], bs, bh, x)
            ps.append(p)
            es.append(e)
            ts, th, p, e = self._da(self.top, ts, th, h1)
            ps.append(p)
            es.append(e)
            s, h = s1, h1
            m = self.config.num_cells
            for k in range(1, m - 1):
                s, h, p, e = self._da(self.bottom[k], s, h, None)
                ps.append(p)
                es.append(e)
            s, h, p, e = self._da(self.bottom[m - 1], s, h, th)
            ps.append(p)
            es.append(e)
            return ((s, h), (ts, th)), self._logits(h), ps, es
        if arch == "stacked_lstm":
            new = []
            inp = x
            for cell, (s, h) in zip(self.bottom, carry):
                s, h = lstm_cell(tape, cell, s, h, inp, D)
                new.append((s, h))
                inp = h
            return new, self._logits(inp), None, None
        s, h = carry
        s, h = lstm_cell(tape, self.bottom[0], s, h, x, D)
        for cell in self.bottom[1:]:
            s, h = lstm_cell(tape, cell, s, h, None, D)
        return (s, h), self._logits(h), None, None

    def run(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim != 3 or X.shape[1] < 1:
            raise DimensionError("expected a non-empty (batch, steps, features) array", X.shape)
        if X.shape[2] != self.config.input_dim:
            raise DimensionError("input feature count", X.shape, (self.config.input_dim,))
        batch, n, _ = X.shape
        carry = self.initial(batch)
        logits = []
        portions = np.empty((n, self.config.cells_per_step, batch)) if self.config.gated else None
        self.masks = [] if self.keep_masks else None
        self.carries = []
        for t in range(n):
            carry, y, ps, es = self.step(carry, X[:, t, :])
            logits.append(y)
            if ps is not None:
                for k, p in enumerate(ps):
                    portions[t, k] = value_of(p)[:, 0]
                if self.keep_masks:
                    self.masks.append([value_of(e) for e in es])
            self.carries.append(carry)
        self.portions = portions
        return logits


# -- public API ----------------------------------------------------------------


def _prep_vector(v, size):
    v = np.asarray(v, dtype=DTYPE)
    if v.shape[-1] != size:
        raise DimensionError("vector dimension", v.shape, (size,))
    return (v[None, :], True) if v.ndim == 1 else (v, False)


def _state_in(st: CellState, size):
    c, squeeze = _prep_vector(st.C, size)
    h, _ = _prep_vector(st.h, size)
    return (Var(np.concatenate([c, h], axis=1)), Var(h)), squeeze


def _state_out(pair, size, squeeze) -> CellState:
    v = value_of(pair[0])
    c, h = v[:, :size].copy(), v[:, size:].copy()
    return CellState(c[0], h[0]) if squeeze else CellState(c, h)


def _squeeze(a, squeeze):
    a = value_of(a)
    return a[0].copy() if squeeze else a.copy()


def _unroller(params: ModelParams, config: ModelConfig, override=None, keep_masks=True):
    return Unroller(config, Tape(record=False), params.named_tensors(), override, keep_masks)


def da_lstm_step(params: ModelParams, config: ModelConfig, prev_bottom: CellState, prev_top: CellState, x_raw, override=None):
    """One hierarchical step. Returns ``(new_bottom, new_top, logits, trace)``."""
    if config.arch != "da_lstm":
        raise ConfigError("da_lstm_step needs a da_lstm config")
    D = config.hidden_size
    u = _unroller(params, config, override)
    bottom, squeeze = _state_in(prev_bottom, D)
    top, _ = _state_in(prev_top, D)
    x, _ = _prep_vector(x_raw, config.input_dim)
    (b, t), y, ps, es = u.step((bottom, top), x)
    trace = _make_trace(config, [value_of(p)[:, 0] for p in ps], [value_of(e) for e in es], squeeze)
    return _state_out(b, D, squeeze), _state_out(t, D, squeeze), _squeeze(y, squeeze), trace


def stacked_step(params: ModelParams, config: ModelConfig, prev_states, x_raw):
    """One step of the stacked baseline. Returns ``(states, logits)``."""
    if config.arch != "stacked_lstm":
        raise ConfigError("stacked_step needs a stacked_lstm config")
    if len(prev_states) != config.num_cells:
        raise DimensionError("layer count", (len(prev_states),), (config.num_cells,))
    D = config.hidden_size
    u = _unroller(params, config)
    carry = []
    squeeze = False
    for st in prev_states:
        pair, squeeze = _state_in(st, D)
        carry.append(pair)
    x, _ = _prep_vector(x_raw, config.input_dim)
    carry, y, _, _ = u.step(carry, x)
    return [_state_out(c, D, squeeze) for c in carry], _squeeze(y, squeeze)


def deep_transition_step(params: ModelParams, config: ModelConfig, prev: CellState, x_raw):
    """One step of the deep-transition baseline. Returns ``(state, logits)``."""
    if config.arch != "deep_transition_lstm":
        raise ConfigError("deep_transition_step needs a deep_transition_lstm config")
    D = config.hidden_size
    u = _unroller(params, config)
    pair, squeeze = _state_in(prev, D)
    x, _ = _prep_vector(x_raw, config.input_dim)
    carry, y, _, _ = u.step(pair, x)
    return _state_out(carry, D, squeeze), _squeeze(y, squeeze)


def _make_trace(config: ModelConfig, ps, es, squeeze=False) -> StepTrace:
    from .metrics import cell_mults

    D = config.hidden_size
    if not config.gated:
        n = config.cells_per_step
        return StepTrace([None] * n, [None] * n, [cell_mults(None, D)] * n)
    mults = [cell_mults(p, D) for p in ps]
    if squeeze:
        ps = [float(p[0]) for p in ps]
        es = [e[0] for e in es]
        mults = [int(m[0]) for m in mults]
    return StepTrace(list(ps), list(es), mults)


def forward_sequence(params: ModelParams, config: ModelConfig, sequence, override=None):
    """Unroll over a (n, input_dim) sequence or a (B, n, input_dim) batch from zero states.

    Returns ``(logits, traces)`` with one :class:`StepTrace` per step.
    """
    X = np.asarray(sequence, dtype=DTYPE)
    if X.ndim == 2:
        if X.shape[0] < 1:
            raise ValueError("empty sequence")
        squeeze, X = True, X[None]
    elif X.ndim == 3:
        squeeze = False
    else:
        raise DimensionError("sequence shape", X.shape)
    if X.shape[1] < 1:
        raise ValueError("empty sequence")
    u = _unroller(params, config, override)
    logits = np.stack([value_of(y) for y in u.run(X)], axis=1)
    traces = []
    for t in range(X.shape[1]):
        if config.gated:
            ps = list(u.portions[t])
            traces.append(_make_trace(config, ps, u.masks[t], squeeze))
        else:
            traces.append(_make_trace(config, None, None))
    return (logits[0] if squeeze else logits), traces


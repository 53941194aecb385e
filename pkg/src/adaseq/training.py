"""Backpropagation through time, Adam, early stopping and gradient checking."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .architecture import ModelConfig, ModelParams, Unroller
from .autodiff import Tape, value_of
from .metrics import cell_mults, portion_mults

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    min_delta: float = 1e-4
    grad_clip_norm: float = 5.0
    seed: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.learning_rate < 0 or self.min_delta < 0:
            raise ValueError("learning_rate and min_delta must be non-negative")
        if min(self.batch_size, self.max_epochs, self.patience, self.eval_batch_size) < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")

    def to_dict(self):
        return asdict(self)


def cross_entropy(logits, labels) -> float:
    """Mean of ``-log softmax(logits)[label]`` over all leading positions."""
    logits = np.asarray(logits, dtype=np.float64)
    return float(Tape(record=False).cross_entropy(logits, np.asarray(labels)).value)


def backward(tape: Tape, loss, leaves: dict, loss_adjoint: float = 1.0) -> dict:
    """Gradients of ``loss`` keyed by parameter name.

    ``leaves`` maps names to the tape leaves the forward pass used.
    Parameters the loss does not depend on get exact zeros.
    """
    adj = tape.backward(loss, loss_adjoint)
    grads = {}
    for name, leaf in leaves.items():
        g = adj.get(leaf.index)
        grads[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g).reshape(leaf.value.shape)
    return grads


def loss_and_grads(params: ModelParams, config: ModelConfig, X, Y, loss_adjoint=1.0, override=None):
    """One forward/backward pass over a (B, n, F) batch with (B, n) labels.

    Returns ``(loss, grads, portions)``; ``portions`` is (n, cells, B) or None.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.named_tensors().items()}
    unroller = Unroller(config, tape, leaves, override)
    logits = unroller.run(X)
    loss = tape.cross_entropy(tape.stack(logits), np.asarray(Y).T)
    grads = backward(tape, loss, leaves, loss_adjoint)
    return float(loss.value), grads, unroller.portions


def evaluate(params: ModelParams, config: ModelConfig, X, Y, batch_size=256, override=None, keep_masks=False):
    """No-grad pass. Returns ``(mean CE, portions)`` with portions (n, cells, N) or None."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    total = 0.0
    parts = []
    masks = []
    P = params.named_tensors()
    for lo in range(0, len(X), batch_size):
        xb, yb = X[lo : lo + batch_size], Y[lo : lo + batch_size]
        tape = Tape(record=False)
        u = Unroller(config, tape, P, override, keep_masks)
        logits = np.stack([value_of(y) for y in u.run(xb)])
        total = total + tape.cross_entropy(logits, yb.T).value * yb.size
        if u.portions is not None:
            parts.append(u.portions)
        if keep_masks:
            masks.append(u.masks)
    portions = np.concatenate(parts, axis=2) if parts else None
    ce = total / Y.size
    if np.asarray(ce).dtype == np.float64:
        ce = float(ce)
    if keep_masks:
        return ce, portions, masks
    return ce, portions


def forward_mults(config: ModelConfig, portions, batch: int, steps: int) -> int:
    """Effective multiplications of one training forward pass."""
    if config.gated:
        return portion_mults(portions, config.hidden_size)
    return int(cell_mults(None, config.hidden_size)) * config.cells_per_step * batch * steps


# -- optimiser -----------------------------------------------------------------


@dataclass
class OptimState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_by_global_norm(grads: dict, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(params: dict, grads: dict, opt: OptimState, clip_norm: float | None = None) -> dict:
    """In-place Adam update of the ``name -> array`` mapping ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at optimiser step {opt.step + 1}")
    if clip_norm is not None:
        grads, _ = clip_by_global_norm(grads, clip_norm)
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name!r} {p.shape}")
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        opt.m[name], opt.v[name] = m, v
        p -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# -- training loop ---------------------------------------------------------------

CSV_FIELDS = ("epoch", "train_ce", "val_ce", "avg_p", "cum_eff_mults", "wall_seconds")


@dataclass
class EpochRow:
    epoch: int
    train_ce: float
    val_ce: float
    avg_p: float
    cum_eff_mults: int
    wall_seconds: float


@dataclass
class TrainReport:
    arch: str
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    test_ce: float = math.nan
    converged_p: float = math.nan
    converged_p_by_cell: list = field(default_factory=list)
    total_eff_mults: int = 0
    stopped_early: bool = False
    params: ModelParams | None = field(default=None, repr=False, compare=False)

    @property
    def convergence_epoch(self) -> int:
        return self.best_epoch

    @property
    def best_val_ce(self) -> float:
        return self.rows[self.best_epoch - 1].val_ce

    @property
    def first_epoch_ce(self) -> float:
        return self.rows[0].val_ce

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                w.writerow([r.epoch, repr(r.train_ce), repr(r.val_ce), repr(r.avg_p), r.cum_eff_mults, repr(r.wall_seconds)])

    @staticmethod
    def read_csv(path) -> list:
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            return [
                EpochRow(
                    int(d["epoch"]), float(d["train_ce"]), float(d["val_ce"]), float(d["avg_p"]),
                    int(d["cum_eff_mults"]), float(d["wall_seconds"]),
                )
                for d in rd
            ]

    def summary(self) -> dict:
        best = self.rows[self.best_epoch - 1]
        return {
            "arch": self.arch,
            "epochs_run": len(self.rows),
            "best_epoch": self.best_epoch,
            "convergence_epoch": self.convergence_epoch,
            "best_val_ce": best.val_ce,
            "first_epoch_val_ce": self.first_epoch_ce,
            "test_ce": self.test_ce,
            "converged_avg_p": None if math.isnan(self.converged_p) else self.converged_p,
            "converged_p_by_cell": self.converged_p_by_cell,
            "avg_p_split": "validation",
            "eff_mults_at_convergence": best.cum_eff_mults,
            "total_eff_mults": self.total_eff_mults,
            "stopped_early": self.stopped_early,
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _split(dataset, name):
    X, Y = dataset.split_arrays(name)
    if len(X) == 0:
        raise ValueError(f"{name} split is empty")
    return X, Y


def train(model_config: ModelConfig, train_config: TrainConfig, dataset, params: ModelParams | None = None, on_batch=None) -> TrainReport:
    """Train with early stopping on validation cross-entropy.

    ``on_batch(portions, batch, steps, mults)`` is called after every training
    forward pass, mainly so callers can audit the cost accounting.
    The returned report carries the best-validation parameters in ``params``.
    """
    Xtr, Ytr = _split(dataset, "train")
    Xva, Yva = _split(dataset, "validation")
    Xte, Yte = _split(dataset, "test")
    if params is None:
        params = ModelParams.init(model_config)
    named = params.named_tensors()
    opt = OptimState(learning_rate=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    report = TrainReport(arch=model_config.arch)
    best_val = math.inf
    best_tensors = {k: v.copy() for k, v in named.items()}
    best_portions = None
    wait = 0
    cum = 0
    start = time.perf_counter()
    n_train, steps = Xtr.shape[0], Xtr.shape[1]
    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n_train)
        loss_sum = 0.0
        for lo in range(0, n_train, train_config.batch_size):
            idx = order[lo : lo + train_config.batch_size]
            loss, grads, portions = loss_and_grads(params, model_config, Xtr[idx], Ytr[idx])
            mults = forward_mults(model_config, portions, len(idx), steps)
            cum += mults
            if on_batch is not None:
                on_batch(portions, len(idx), steps, mults)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss in epoch {epoch}")
            loss_sum += loss * len(idx)
            adam_step(named, grads, opt, train_config.grad_clip_norm)
        val_ce, val_portions = evaluate(params, model_config, Xva, Yva, train_config.eval_batch_size)
        avg_p = float(np.mean(val_portions)) if val_portions is not None else math.nan
        report.rows.append(
            EpochRow(epoch, loss_sum / n_train, val_ce, avg_p, cum, time.perf_counter() - start)
        )
        log.info("epoch %d train %.4f val %.4f p %.3f", epoch, loss_sum / n_train, val_ce, avg_p)
        if val_ce < best_val - train_config.min_delta:
            best_val = val_ce
            report.best_epoch = epoch
            best_tensors = {k: v.copy() for k, v in named.items()}
            best_portions = val_portions
            wait = 0
        else:
            wait += 1
            if wait >= train_config.patience:
                report.stopped_early = True
                break
    if report.best_epoch == 0:
        # validation never improved on +inf (non-finite losses); keep epoch 1
        report.best_epoch = 1
    params.load_(best_tensors)
    report.total_eff_mults = cum
    report.test_ce, _ = evaluate(params, model_config, Xte, Yte, train_config.eval_batch_size)
    if best_portions is not None:
        report.converged_p = float(np.mean(best_portions))
        report.converged_p_by_cell = [float(v) for v in best_portions.mean(axis=(0, 2))]
    report.params = params
    return report


# -- gradient check ----------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict
    failures: list
    flagged: list
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def central_difference(f, x: np.ndarray, step_size: float) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. the array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step_size
        plus = f()
        flat[j] = orig - step_size
        minus = f()
        flat[j] = orig
        out[j] = (plus - minus) / (2.0 * step_size)
    return out.reshape(x.shape)


def _probe(params, config, X, Y, override):
    """Loss plus the branch pattern of every soft-mask entry (None when ungated)."""
    if not config.gated or override is not None:
        ce, _ = evaluate(params, config, X, Y, len(X), override)
        return ce, None
    ce, _, masks = evaluate(params, config, X, Y, len(X), keep_masks=True)
    e = np.array([step for chunk in masks for step in chunk])
    # 0 = clipped low, 1 = soft, 2 = clipped high
    return ce, np.where(e == 0.0, 0, np.where(e == 1.0, 2, 1)).astype(np.int8)


def finite_diff_check(params: ModelParams, config: ModelConfig, X, Y, step_size=1e-5, tolerance=1e-4, names=None, override=None, precision="extended") -> GradCheckReport:
    """Compare backprop gradients with central differences, coordinate by coordinate.

    The difference quotients are evaluated on a copy of the model held in
    ``numpy.longdouble`` when ``precision="extended"`` (80-bit on x86), so
    that round-off in the loss difference stays far below the tolerance even
    for gradients near 1e-8. ``precision="double"`` probes in float64.

    Coordinates whose perturbations move any soft-mask entry across a
    threshold branch are reported in ``flagged`` and excluded from the
    pass/fail verdict.
    """
    _, grads, _ = loss_and_grads(params, config, X, Y, override=override)
    dtype = {"extended": np.longdouble, "double": np.float64}[precision]
    shadow = ModelParams.from_tensors({k: v.astype(dtype) for k, v in params.named_tensors().items()})
    named = shadow.named_tensors()
    X = np.asarray(X, dtype=dtype)
    Y = np.asarray(Y)
    names = list(named) if names is None else list(names)
    h = dtype(step_size)
    max_err = {}
    failures, flagged = [], []
    checked = 0
    for name in names:
        flat = named[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus, b_plus = _probe(shadow, config, X, Y, override)
            flat[j] = orig - h
            minus, b_minus = _probe(shadow, config, X, Y, override)
            flat[j] = orig
            fd = float((plus - minus) / (2 * h))
            err = float(relative_error(fd, gflat[j]))
            if b_plus is not None and not np.array_equal(b_plus, b_minus):
                flagged.append((name, j, err))
                continue
            checked += 1
            worst = max(worst, err)
            if err > tolerance:
                failures.append((name, j, fd, float(gflat[j]), err))
        max_err[name] = worst
    return GradCheckReport(max_err, failures, flagged, checked, tolerance)

"""Experiment specs, config resolution and the artifact-writing runner.

A run configuration is one JSON object with the sections ``model``,
``train``, ``data`` and optionally ``sweep``, ``compare``, ``checkpoint``,
``eval`` and ``gradcheck``. ``input_dim`` and ``num_classes`` of the model are
taken from the data. Artifact schemas are documented in docs/formats.md.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .architecture import ARCHS, ConfigError, ModelConfig, ModelParams
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    extract_sequences,
    load_dataset,
    load_pamap2,
    save_dataset,
    split_dataset,
    standardize,
    synth_generate,
)
from .metrics import portion_mults
from .training import TrainConfig, TrainReport, evaluate, finite_diff_check, train

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "ADASEQ_DATA_ROOT"
INCOMPLETE = "INCOMPLETE"
SWEEP_VARIABLES = ("r", "m")
ABSENT_METHODS = ("phased_lstm", "clockwork_rnn")
COMPARISON_FIELDS = (
    "method",
    "status",
    "ce_epoch1",
    "best_val_ce",
    "test_ce",
    "epochs_to_convergence",
    "eff_mults_at_convergence",
    "total_eff_mults",
)
PORTION_FIELDS = ("variable", "value", "avg_p", "num_runs")

DEFAULT_CONFIG = {
    "model": {"arch": "da_lstm", "hidden_size": 16, "num_cells": 3, "mask": {"epsilon": 0.01, "sharpness": 20.0}, "seed": 0},
    "train": {},
    "data": {"source": "synth", "r": 0.5, "n": 100, "seed": 0, "num_sequences": 300, "input_dim": 8, "num_classes": 5},
    "sweep": None,
    "compare": [],
}
_TOP_KEYS = {"model", "train", "data", "sweep", "compare", "checkpoint", "eval", "gradcheck"}


# -- configuration -----------------------------------------------------------------


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str):
    """``"a.b=value"`` -> ``(["a", "b"], value)``; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"bad override key {key!r}")
    return path, value


def apply_override(cfg: dict, path, value):
    node = cfg
    for part in path[:-1]:
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not a section")
    node[path[-1]] = value


def resolve_config(file_cfg: dict | None = None, overrides=(), environ=None) -> dict:
    """Defaults, then the config file, then the data-root env var, then ``--set`` overrides."""
    environ = os.environ if environ is None else environ
    cfg = _merge(DEFAULT_CONFIG, file_cfg or {})
    env_root = environ.get(DATA_ROOT_ENV)
    if env_root:
        cfg["data"]["root"] = env_root
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if cfg["data"].get("source") != "pamap2" and env_root and cfg["data"].get("root") == env_root:
        cfg["data"]["root"] = (file_cfg or {}).get("data", {}).get("root")
    return cfg


def _build(cls, section: dict, what: str, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from None


@dataclass(frozen=True)
class DataSpec:
    source: str = "synth"
    r: float = 0.5
    n: int = 100
    seed: int = 0
    # synthetic generator
    num_sequences: int = 300
    input_dim: int = 8
    num_classes: int = 5
    noise: float = 0.1
    persistence: float = 0.75
    segment_mean: float = 8.0
    # PAMAP2
    root: str | None = None
    standardize: bool = True
    # a prepared cache replaces both sources
    cache: str | None = None

    def __post_init__(self):
        if self.source not in ("synth", "pamap2"):
            raise ValueError(f"data.source must be 'synth' or 'pamap2', got {self.source!r}")
        if self.source == "pamap2" and not self.root and not self.cache:
            raise ValueError(f"pamap2 data needs data.root (or ${DATA_ROOT_ENV}) or data.cache")
        if self.n < 1:
            raise ValueError("data.n must be positive")
        lo_ok = self.r > 0 if self.source == "synth" else self.r >= 0
        hi_ok = self.r < 1 if self.source == "synth" else self.r <= 1
        if not (lo_ok and hi_ok):
            raise ValueError(f"data.r out of range for {self.source}: {self.r}")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep.variable must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise ValueError("sweep.values must be non-empty")
        if not self.seeds:
            raise ValueError("sweep.seeds must be non-empty")


@dataclass
class ExperimentSpec:
    model: ModelConfig
    train: TrainConfig
    data: DataSpec
    sweep: SweepSpec | None = None
    compare: tuple = ()
    out_dir: Path | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_config(cls, cfg: dict, out_dir=None) -> ExperimentSpec:
        data = _build(DataSpec, cfg["data"], "data")
        model_cfg = dict(cfg["model"])
        model_cfg.setdefault("input_dim", data.input_dim if data.source == "synth" else 52)
        model_cfg.setdefault("num_classes", data.num_classes if data.source == "synth" else 2)
        model = _build(ModelConfig, model_cfg, "model")
        trn = _build(TrainConfig, cfg.get("train") or {}, "train")
        sweep = None
        if cfg.get("sweep"):
            s = dict(cfg["sweep"])
            for k in ("values", "seeds"):
                if k in s:
                    s[k] = tuple(s[k])
            sweep = _build(SweepSpec, s, "sweep")
        compare = tuple(cfg.get("compare") or ())
        bad = [a for a in compare if a not in ARCHS]
        if bad:
            raise ConfigError(f"unknown architectures in compare: {bad}")
        unknown = set(cfg.get("gradcheck") or {}) - set(GRADCHECK_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown gradcheck keys: {sorted(unknown)}")
        spec = cls(model, trn, data, sweep, compare, Path(out_dir) if out_dir else None, cfg)
        for point in spec.points():
            point.check()
        return spec

    def with_point(self, variable=None, value=None, seed=None) -> ExperimentSpec:
        model, trn, data = self.model.to_dict(), self.train.to_dict(), dict(self.data.__dict__)
        if variable == "r":
            data["r"] = float(value)
        elif variable == "m":
            model["num_cells"] = int(value)
        if seed is not None:
            model["seed"] = trn["seed"] = data["seed"] = int(seed)
        return ExperimentSpec(
            _build(ModelConfig, model, "model"),
            _build(TrainConfig, trn, "train"),
            _build(DataSpec, data, "data"),
            None,
            self.compare,
            self.out_dir,
            self.raw,
        )

    def points(self):
        """Every (variable, value, seed) run of the spec as a single-run spec."""
        if self.sweep is None:
            return [self]
        return [
            self.with_point(self.sweep.variable, v, s) for v in self.sweep.values for s in self.sweep.seeds
        ]

    def check(self):
        for arch in (self.model.arch, *self.compare):
            _build(ModelConfig, {**self.model.to_dict(), "arch": arch}, "model")

    def resolved(self) -> dict:
        out = {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": dict(self.data.__dict__),
            "compare": list(self.compare),
            "sweep": None,
        }
        if self.sweep is not None:
            out["sweep"] = {"variable": self.sweep.variable, "values": list(self.sweep.values), "seeds": list(self.sweep.seeds)}
        for k in ("checkpoint", "eval", "gradcheck"):
            if k in self.raw:
                out[k] = self.raw[k]
        return out


# -- data -----------------------------------------------------------------------------


def _pamap2_dir(root) -> Path:
    root = Path(root)
    if root.is_dir() and not any(root.glob("*.dat")) and (root / "Protocol").is_dir():
        return root / "Protocol"
    return root


def prepare_data(spec: DataSpec):
    """Build (or load) the split dataset described by ``spec``."""
    if spec.cache:
        return load_dataset(spec.cache)
    if spec.source == "synth":
        ds = synth_generate(
            spec.r, spec.n, spec.num_sequences, spec.input_dim, spec.num_classes, spec.seed,
            segment_mean=spec.segment_mean, noise=spec.noise, persistence=spec.persistence,
        )
        return split_dataset(ds, spec.seed)
    records = load_pamap2(_pamap2_dir(spec.root))
    ds = split_dataset(extract_sequences(records, spec.r, spec.n, spec.seed), spec.seed)
    if spec.standardize:
        ds, _, _ = standardize(ds)
    return ds


def model_for(spec: ExperimentSpec, dataset, arch=None) -> ModelConfig:
    d = spec.model.to_dict()
    d.update(input_dim=dataset.num_features, num_classes=dataset.num_classes)
    if arch is not None:
        d["arch"] = arch
    return ModelConfig.from_dict(d)


# -- artifacts -------------------------------------------------------------------------


def cell_names(config: ModelConfig) -> list:
    if not config.gated:
        return []
    return ["B_1", "T"] + [f"B_{i}" for i in range(2, config.num_cells + 1)]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_comparison(path, reports: dict):
    """One row per trained method plus the out-of-scope baselines marked absent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_FIELDS)
        for arch, rep in reports.items():
            s = rep.summary()
            w.writerow([
                arch, "trained", _fmt(s["first_epoch_val_ce"]), _fmt(s["best_val_ce"]), _fmt(s["test_ce"]),
                s["convergence_epoch"], s["eff_mults_at_convergence"], s["total_eff_mults"],
            ])
        for name in ABSENT_METHODS:
            w.writerow([name, "absent_by_design"] + [""] * (len(COMPARISON_FIELDS) - 2))


def read_comparison(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_portion_summary(path, rows):
    """``rows`` are ``(variable, value, avg_p, num_runs)`` tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PORTION_FIELDS)
        for var, value, p, k in rows:
            w.writerow([var, _fmt(value), _fmt(float(p)), k])


def read_portion_summary(path) -> list:
    with open(path, newline="") as fh:
        return [
            (d["variable"], d["value"], float(d["avg_p"]) if d["avg_p"] else math.nan, int(d["num_runs"]))
            for d in csv.DictReader(fh)
        ]


def _run_portion_rows(report: TrainReport, config: ModelConfig):
    if not config.gated:
        return []
    rows = [("all", "", report.converged_p, 1)]
    rows += [("cell", name, p, 1) for name, p in zip(cell_names(config), report.converged_p_by_cell)]
    return rows


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Marker:
    """Creates ``INCOMPLETE`` on entry and removes it on a clean exit."""

    def __init__(self, out: Path):
        self.path = out / INCOMPLETE

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("run in progress\n")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.path.unlink()
        else:
            self.path.write_text(f"run failed: {exc_type.__name__}: {exc}\n")
        return False


# -- runners -------------------------------------------------------------------------------


def run_single(spec: ExperimentSpec, out: Path, dataset=None) -> dict:
    """Train the primary architecture (and any ``compare`` ones) into ``out``."""
    out = Path(out)
    with _Marker(out):
        write_json(out / "config.json", spec.resolved())
        if dataset is None:
            dataset = prepare_data(spec.data)
        reports = {}
        for arch in (spec.model.arch, *[a for a in spec.compare if a != spec.model.arch]):
            cfg = model_for(spec, dataset, arch)
            log.info("training %s on %d sequences", arch, len(dataset))
            reports[arch] = train(cfg, spec.train, dataset)
        primary_cfg = model_for(spec, dataset)
        primary = reports[spec.model.arch]
        primary.write_csv(out / "epochs.csv")
        summary = primary.summary()
        summary["sweep_point"] = {"r": spec.data.r, "m": spec.model.num_cells, "seed": spec.model.seed}
        write_json(out / "summary.json", summary)
        write_portion_summary(out / "portion_summary.csv", _run_portion_rows(primary, primary_cfg))
        write_comparison(out / "comparison.csv", reports)
        save_checkpoint(out / "model.ckpt", primary.params, primary_cfg)
        for arch, rep in reports.items():
            if arch != spec.model.arch:
                rep.write_csv(out / f"epochs_{arch}.csv")
    return reports


def _point_dir(variable, value) -> str:
    return f"{variable}={value}"


def run_sweep(spec: ExperimentSpec, out: Path) -> list:
    """Train every sweep point and seed; returns ``(value, mean p, runs)`` rows."""
    out = Path(out)
    sw = spec.sweep
    rows = []
    with _Marker(out):
        write_json(out / "config.json", spec.resolved())
        for value in sw.values:
            point_out = out / _point_dir(sw.variable, value)
            ps = []
            for seed in sw.seeds:
                point = spec.with_point(sw.variable, value, seed)
                run_out = point_out if len(sw.seeds) == 1 else point_out / f"seed={seed}"
                rep = run_single(point, run_out)[point.model.arch]
                ps.append(rep.converged_p)
            if len(sw.seeds) > 1:
                write_json(point_out / "seeds.json", {"seeds": list(sw.seeds), "converged_avg_p": ps})
            rows.append((value, float(np.mean(ps)), len(ps)))
            log.info("sweep %s=%s: mean p %.4f over %d seeds", sw.variable, value, rows[-1][1], len(ps))
        write_portion_summary(out / "portion_summary.csv", [(sw.variable, v, p, k) for v, p, k in rows])
    return rows


def run_experiment(spec: ExperimentSpec) -> int:
    """Run a validated spec into ``spec.out_dir``; returns a process exit code."""
    if spec.sweep is not None:
        run_sweep(spec, spec.out_dir)
    else:
        run_single(spec, spec.out_dir)
    return 0


def run_prepare(spec: ExperimentSpec, out: Path):
    out = Path(out)
    with _Marker(out):
        write_json(out / "config.json", spec.resolved())
        ds = prepare_data(spec.data)
        save_dataset(ds, out / "dataset.bin")
        write_json(out / "dataset.json", {"meta": ds.meta, "shape": list(ds.X.shape), "splits": ds.split_counts()})
    return ds


def run_eval(spec: ExperimentSpec, out: Path, checkpoint, split="test") -> dict:
    out = Path(out)
    with _Marker(out):
        write_json(out / "config.json", spec.resolved())
        params, cfg = load_checkpoint(checkpoint)
        ds = prepare_data(spec.data)
        if (ds.num_features, ds.num_classes) != (cfg.input_dim, cfg.num_classes):
            raise ConfigError(
                f"checkpoint expects {cfg.input_dim} features / {cfg.num_classes} classes, "
                f"data has {ds.num_features} / {ds.num_classes}"
            )
        X, Y = ds.split_arrays(split)
        if len(X) == 0:
            raise ValueError(f"{split} split is empty")
        ce, portions = evaluate(params, cfg, X, Y)
        result = {
            "split": split,
            "num_sequences": int(len(X)),
            "ce": ce,
            "avg_p": None if portions is None else float(np.mean(portions)),
            "eff_mults": portion_mults(portions, cfg.hidden_size) if cfg.gated
            else 8 * cfg.hidden_size**2 * cfg.cells_per_step * X.shape[0] * X.shape[1],
            "arch": cfg.arch,
        }
        write_json(out / "eval.json", result)
    return result


GRADCHECK_DEFAULTS = {
    "archs": list(ARCHS),
    "hidden_size": 6,
    "num_cells": 3,
    "steps": 4,
    "batch": 2,
    "input_dim": 3,
    "num_classes": 3,
    "step_size": 1e-5,
    "tolerance": 1e-4,
    "seed": 0,
}


def run_gradcheck(spec: ExperimentSpec, out: Path) -> dict:
    out = Path(out)
    opts = {**GRADCHECK_DEFAULTS, **(spec.raw.get("gradcheck") or {})}
    with _Marker(out):
        write_json(out / "config.json", {**spec.resolved(), "gradcheck": opts})
        rng = np.random.default_rng(opts["seed"])
        X = rng.normal(size=(opts["batch"], opts["steps"], opts["input_dim"]))
        Y = rng.integers(0, opts["num_classes"], size=(opts["batch"], opts["steps"]))
        results = {}
        for arch in opts["archs"]:
            cfg = ModelConfig(
                arch=arch, hidden_size=opts["hidden_size"], num_cells=opts["num_cells"],
                input_dim=opts["input_dim"], num_classes=opts["num_classes"], mask=spec.model.mask,
                seed=opts["seed"],
            )
            rep = finite_diff_check(ModelParams.init(cfg), cfg, X, Y, opts["step_size"], opts["tolerance"])
            results[arch] = {
                "passed": rep.passed,
                "worst_rel_error": rep.worst,
                "checked": rep.checked,
                "flagged": len(rep.flagged),
                "failures": len(rep.failures),
                "max_rel_error": rep.max_rel_error,
            }
        write_json(out / "gradcheck.json", results)
    return results

"""Command-line entry point::

    adaseq <subcommand> --config <file> [--set key=value ...] --out <dir>

Subcommands: ``data prepare``, ``train``, ``eval``, ``gradcheck``, ``sweep``.
Exit status is 0 on success, 2 for configuration errors (nothing is written)
and 1 when a run fails part-way (its directory keeps an ``INCOMPLETE`` file).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .architecture import ConfigError
from .experiment import (
    ExperimentSpec,
    resolve_config,
    run_eval,
    run_experiment,
    run_gradcheck,
    run_prepare,
)

log = logging.getLogger("adaseq")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.max_epochs=5 (repeatable)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaseq", description="Depth-adaptive LSTM experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    data = sub.add_parser("data", help="dataset utilities")
    data_sub = data.add_subparsers(dest="action", required=True)
    _common(data_sub.add_parser("prepare", help="build, split and cache a dataset"))
    _common(sub.add_parser("train", help="train one model (plus any 'compare' baselines)"))
    ev = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    _common(ev)
    ev.add_argument("--checkpoint", type=Path, help="checkpoint file (or config key 'checkpoint')")
    ev.add_argument("--split", default="test", choices=("train", "validation", "test"))
    _common(sub.add_parser("gradcheck", help="finite-difference check of backprop gradients"))
    _common(sub.add_parser("sweep", help="train across a sweep of r or m values"))
    return parser


def _load_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(_load_file(args.config), args.overrides)
        spec = ExperimentSpec.from_config(cfg, args.out)
        if args.command == "sweep" and spec.sweep is None:
            raise ConfigError("sweep needs a 'sweep' section (variable, values, seeds)")
        if args.command == "train" and spec.sweep is not None:
            raise ConfigError("train runs a single point; use 'adaseq sweep' for sweeps")
        checkpoint = None
        if args.command == "eval":
            checkpoint = args.checkpoint or cfg.get("checkpoint")
            if checkpoint is None:
                raise ConfigError("eval needs --checkpoint or a 'checkpoint' config entry")
            if not Path(checkpoint).is_file():
                raise ConfigError(f"checkpoint not found: {checkpoint}")
    except ConfigError as exc:
        print(f"adaseq: configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "data":
            ds = run_prepare(spec, args.out)
            print(f"wrote {args.out / 'dataset.bin'}: {ds.split_counts()}")
        elif args.command in ("train", "sweep"):
            run_experiment(spec)
            print(f"artifacts in {args.out}")
        elif args.command == "eval":
            res = run_eval(spec, args.out, checkpoint, args.split)
            print(f"{res['split']} CE {res['ce']:.6f}")
        elif args.command == "gradcheck":
            res = run_gradcheck(spec, args.out)
            for arch, r in res.items():
                print(f"{arch}: {'pass' if r['passed'] else 'FAIL'} worst relative error {r['worst_rel_error']:.3e}")
            return 0 if all(r["passed"] for r in res.values()) else 1
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.debug("run failed", exc_info=True)
        print(f"adaseq: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

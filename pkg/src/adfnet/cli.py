"""``adfnet`` command line.

Verbs: prep, train, evaluate, relevance, mask-sweep, gap, selfcheck.
Every verb accepts ``--config``, ``--seed``, ``--out`` and ``--dataset``.
Exit status is 0 on success, 1 on a failed run or failed self-check and 2
on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .errors import (
    ConfigurationError,
    IngestionError,
    LoadError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .model import atomic_write_text
from .selfcheck import FAULTS, run_selfcheck


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="TOML experiment config")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    parser.add_argument("--dataset", help="dataset name (builtin, synthetic kind or schema entry)")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adfnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    _common(sub.add_parser("prep", help="ingest, split and standardise a dataset"))

    p = sub.add_parser("train", help="train a model (or cross-validate)")
    _common(p)
    p.add_argument("--mode", choices=("lpn", "dnn"))
    p.add_argument("--cv", type=int, metavar="K", help="run K-fold cross-validation instead")

    p = sub.add_parser("evaluate", help="validation metrics of trained parameters")
    _common(p)
    p.add_argument("--mode", choices=("lpn", "dnn"))
    p.add_argument("--params", type=Path)

    p = sub.add_parser("relevance", help="averaged feature relevance ranking")
    _common(p)
    p.add_argument("--method", required=True, help="lpn, gs or std")
    p.add_argument("--params", type=Path)

    p = sub.add_parser("mask-sweep", help="validation R^2 while masking ranked features")
    _common(p)
    p.add_argument("--ranking", type=Path, required=True, help="relevance report")
    p.add_argument("--order", choices=("ascending", "descending"), default="ascending")
    p.add_argument("--params", type=Path)

    p = sub.add_parser("gap", help="uncertainty-gap scores for validation samples")
    _common(p)
    p.add_argument("--samples", type=int, nargs="+", help="validation sample ids")
    p.add_argument("--factors", type=float, nargs="+", help="variance factors t")
    p.add_argument("--params", type=Path)

    p = sub.add_parser("selfcheck", help="numerical release gate")
    _common(p)
    p.add_argument("--inject", choices=FAULTS, help="run with a deliberate fault")
    return parser


def _summary(report: dict) -> str:
    payload = report["payload"]
    if report["command"] == "train":
        return f"final {payload['final']}"
    if report["command"] == "train-cv":
        return f"cross-validation {payload['aggregate']}"
    if report["command"] == "relevance":
        return "ranking " + ", ".join(payload["features"])
    if report["command"] == "mask-sweep":
        return f"AUC {payload['auc']:.4f}"
    if report["command"] == "gap":
        return f"{len(payload['samples'])} sample profile(s)"
    if report["command"] == "prep":
        return f"{payload['n_train']} train / {payload['n_validation']} validation rows, d={payload['d']}"
    return json.dumps(payload.get("validation", {}))


def run(args) -> int:
    if args.verb == "selfcheck":
        report = run_selfcheck(args.inject)
        for c in report.checks:
            status = "PASS" if c.passed else "FAIL"
            print(f"{status} {c.name}: observed {c.observed:.3g} (tolerance {c.tolerance:.3g}) {c.detail}")
        atomic_write_text(args.out / "selfcheck_report.json",
                          json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        if not report.passed:
            print("failed checks: " + ", ".join(report.failures), file=sys.stderr)
            return 1
        return 0

    cfg = ex.load_config(args.config).with_overrides(args.seed, args.dataset, getattr(args, "mode", None))
    out = args.out
    if args.verb == "prep":
        report = ex.cmd_prep(cfg, out)
    elif args.verb == "train":
        report = ex.cmd_train(cfg, out, folds=args.cv)
    elif args.verb == "evaluate":
        report = ex.cmd_evaluate(cfg, out, args.params)
    elif args.verb == "relevance":
        report = ex.cmd_relevance(cfg, out, args.method, args.params)
    elif args.verb == "mask-sweep":
        report = ex.cmd_mask_sweep(cfg, out, args.ranking, args.params, args.order)
    else:
        report = ex.cmd_gap(cfg, out, args.samples, args.factors, args.params)
    print(f"{report['command']}: {_summary(report)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigurationError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestionError, TrainingDivergedError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

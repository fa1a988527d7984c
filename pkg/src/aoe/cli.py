"""Command line entry point: ``aoe run | theory | compare``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from aoe import experiment
from aoe.exceptions import InvalidArgumentError
from aoe.theory import dumps_report, run_theory_suite


def _cmd_run(args) -> int:
    config = experiment.load_config(args.config)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    result = experiment.run_experiment(config, args.out)
    metrics = result["metrics"]
    print(f"run {result['config_hash']} method={result['method']} seeds={result['seeds']}")
    for key in ("near_fpr95", "near_auroc", "far_fpr95", "id_acc",
                "train_oversoftening_mean_margin", "final_T"):
        m = metrics[key]
        print(f"  {key:32s} {m['mean']:.4f} +- {m['std']:.4f}")
    print(f"  written to {result['run_dir']}")
    return 0


def _cmd_theory(args) -> int:
    report = run_theory_suite(args.trials, args.seed)
    text = dumps_report(report)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']:16s} worst={check['worst_residual']:.3e} n={check['trials']}")
    return 0 if report["all_passed"] else 1


def _cmd_compare(args) -> int:
    rows = experiment.compare_methods(args.configs, args.out, args.runs)
    for r in rows:
        print(f"{r['method']:18s} {r['metric']:32s} {r['mean']:.4f} +- {r['std']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aoe", description="Outlier exposure experiments on synthetic data")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--out", default="runs", type=Path, help="root of run directories")
    run.set_defaults(func=_cmd_run)

    th = sub.add_parser("theory", help="numerical checks of the margin and temperature results")
    th.add_argument("--trials", type=int, default=1000)
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--out", type=Path, help="write the JSON report here")
    th.set_defaults(func=_cmd_theory)

    cmp_ = sub.add_parser("compare", help="run several configs and tabulate mean/std")
    cmp_.add_argument("--configs", nargs="+", required=True, type=Path)
    cmp_.add_argument("--out", required=True, type=Path, help="CSV output path")
    cmp_.add_argument("--runs", default="runs", type=Path, help="root of run directories")
    cmp_.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgumentError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

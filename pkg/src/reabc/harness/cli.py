"""Command-line interface: synthesize, run, summarize."""

from __future__ import annotations

import argparse
import json
import sys

from .config import PRESETS, load_config
from .experiment import run_experiment, summarize, synthesize_data


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="out_dir")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reabc",
        description="Likelihood-free inference experiments with rare-event "
                    "SMC likelihood estimates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="draw and persist observed data")
    _add_config_flags(p_syn)

    p_run = sub.add_parser("run", help="run a replicated experiment")
    _add_config_flags(p_run)
    p_run.add_argument("--replicates", type=int)
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--budget-match", dest="budget_match",
                       help="path to a reference run's summary.json (or its directory)")
    p_run.add_argument("--data", dest="data_path")

    p_sum = sub.add_parser("summarize", help="aggregate results into CSVs")
    p_sum.add_argument("--in", dest="inputs", nargs="+", required=True)
    p_sum.add_argument("--out", dest="out_dir", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "summarize":
        stats, sched = summarize(args.inputs, args.out_dir)
        print(stats)
        print(sched)
        return 0

    overrides = {
        k: getattr(args, k, None)
        for k in ("seed", "out_dir", "replicates", "workers", "budget_match", "data_path")
    }
    cfg = load_config(args.config, args.preset, overrides)

    if args.command == "synthesize":
        path = synthesize_data(cfg.model, cfg.seed, cfg.out_dir)
        print(path)
        return 0

    summary = run_experiment(cfg)
    failures = [r for r in summary["replicates"] if r is None or r.get("failed")]
    done = len(summary["replicates"]) - len(failures)
    print(json.dumps({"completed": done, "failed": len(failures),
                      "out": cfg.out_dir}))
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())

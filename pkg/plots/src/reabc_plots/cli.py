"""Command-line figure rendering: ``reabc-plot schedule|box``."""

from __future__ import annotations

import argparse
import sys

from .figures import PlotSpec, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reabc-plot",
        description="Render schedule and box-plot figures from experiment CSVs.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for name, help_text in (("schedule", "tolerance vs step, one line per run"),
                            ("box", "box plots of replicate statistics")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="inputs", nargs="+", required=True,
                       help="input CSV files")
        p.add_argument("--out", required=True,
                       help="output path stem (.png and .svg are written)")
        p.add_argument("--truth", type=float, default=None,
                       help="reference value drawn as a horizontal line")
        p.add_argument("--linear", action="store_true",
                       help="linear tolerance axis (default: log)")
        p.add_argument("--statistic", default="",
                       help="statistic to box-plot (default: posterior means)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_stem = args.out
    for suffix in (".png", ".svg"):
        if out_stem.endswith(suffix):
            out_stem = out_stem[: -len(suffix)]
    spec = PlotSpec(
        inputs=tuple(args.inputs),
        kind="schedule" if args.kind == "schedule" else "boxplot",
        out_stem=out_stem,
        log_scale=not args.linear,
        truth=args.truth,
        statistic=args.statistic,
    )
    for path in render(spec):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Render experiment CSVs into static schedule and box-plot figures.

Inputs are the aggregator's long-format files: ``schedules.csv`` with
``algorithm,replicate,step,epsilon`` rows and ``statistics.csv`` with
``algorithm,replicate,statistic,value`` rows.  Output is batch-only
(PNG and SVG side by side), styled from a fixed rc set with no
timestamps or salted ids, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["PlotSpec", "SchemaError", "plot_schedule", "plot_box", "render"]

_RC = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "reabc-plots",
    "path.simplify": False,
}

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


class SchemaError(ValueError):
    """An input CSV does not conform to the aggregator schema."""


@dataclass(frozen=True)
class PlotSpec:
    """What to draw and where to put it.

    ``kind`` is ``"schedule"`` or ``"boxplot"``; ``out_stem`` is the output
    path without extension (both ``.png`` and ``.svg`` are written).
    ``statistic`` selects the box-plot rows; when empty, every statistic
    named ``posterior_mean_*`` is drawn as its own group.
    """

    inputs: tuple
    kind: str
    out_stem: str
    log_scale: bool = True
    truth: float | None = None
    statistic: str = ""
    xlabel: str = ""
    ylabel: str = ""

    def __post_init__(self):
        if self.kind not in ("schedule", "boxplot"):
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("no input files given")


def _read_rows(paths, required):
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for column in required:
                if column not in header:
                    raise SchemaError(f"{path}: missing required column {column!r}")
            rows.extend(reader)
    if not rows:
        raise SchemaError("input files contain no data rows")
    return rows


def plot_schedule(spec):
    """Tolerance-versus-step lines, one per (algorithm, replicate).

    The tolerance axis is logarithmic unless the spec turns it off; the
    legend carries one entry per algorithm.
    """
    rows = _read_rows(spec.inputs, ("algorithm", "replicate", "step", "epsilon"))
    series = {}
    for row in rows:
        key = (row["algorithm"], row["replicate"])
        series.setdefault(key, []).append((int(row["step"]), float(row["epsilon"])))
    algorithms = sorted({a for a, _ in series})
    colors = {a: _PALETTE[i % len(_PALETTE)] for i, a in enumerate(algorithms)}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        seen = set()
        for (algorithm, replicate) in sorted(series):
            pts = sorted(series[(algorithm, replicate)])
            label = algorithm if algorithm not in seen else None
            seen.add(algorithm)
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    color=colors[algorithm], alpha=0.75, linewidth=1.2,
                    label=label)
        if spec.log_scale:
            ax.set_yscale("log")
        ax.set_xlabel(spec.xlabel or "step")
        ax.set_ylabel(spec.ylabel or "tolerance")
        ax.legend(loc="upper right")
        fig.tight_layout()
    return fig


def plot_box(spec):
    """Grouped box plots of replicate statistics by algorithm.

    Draws one box per (statistic, algorithm) group and, when given, a
    horizontal reference line at the true parameter value.
    """
    rows = _read_rows(spec.inputs, ("algorithm", "replicate", "statistic", "value"))
    if spec.statistic:
        wanted = lambda s: s == spec.statistic
    else:
        wanted = lambda s: s.startswith("posterior_mean_")
    groups = {}
    for row in rows:
        if wanted(row["statistic"]):
            key = (row["statistic"], row["algorithm"])
            groups.setdefault(key, []).append(float(row["value"]))
    if not groups:
        raise SchemaError("no rows match the requested statistic")
    keys = sorted(groups)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        data = [groups[k] for k in keys]
        labels = [f"{stat.removeprefix('posterior_mean_')}\n{alg}"
                  for stat, alg in keys]
        ax.boxplot(data, tick_labels=labels)
        if spec.truth is not None:
            ax.axhline(spec.truth, color="#444444", linestyle="--", linewidth=1.0,
                       label=f"truth = {spec.truth:g}")
            ax.legend(loc="upper right")
        ax.set_ylabel(spec.ylabel or "posterior mean")
        fig.tight_layout()
    return fig


def render(spec):
    """Draw the figure and write it as PNG and SVG; returns the two paths."""
    fig = plot_schedule(spec) if spec.kind == "schedule" else plot_box(spec)
    parent = os.path.dirname(os.path.abspath(spec.out_stem))
    os.makedirs(parent, exist_ok=True)
    png = spec.out_stem + ".png"
    svg = spec.out_stem + ".svg"
    # svg.hashsalt is read at save time; strip volatile metadata so
    # identical inputs give identical bytes
    with plt.rc_context(_RC):
        fig.savefig(png, metadata={"Software": None})
        fig.savefig(svg, metadata={"Date": None})
    plt.close(fig)
    return png, svg

"""Replicated experiments: synthesize data, run, aggregate.

Each replicate derives its randomness from the root seed and its own
index, so results are independent of worker scheduling; replicates run
in parallel across processes when ``workers > 1``.  A failed replicate
is recorded in the aggregate summary and the remaining replicates still
run.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..core import STREAM_DATA, ContractError, ObservedData, stream
from ..mcmc import run_abc_mcmc
from ..outer_smc import run_abc_smc, run_re_abc_smc2
from .config import RunConfig, build_model, sampler_config
from .io import (
    atomic_write_text,
    file_sha256,
    particles_csv,
    read_manifest,
    read_observed,
    schedule_csv,
    versions,
    write_manifest,
    write_observed,
)

DATA_FILENAMES = {"gaussian": "observed.csv", "graph": "observed.edges"}
DATA_KINDS = {"gaussian": "vector", "graph": "graph"}


def synthesize_data(model_dict, seed, out_dir):
    """Draw one observed dataset at the model's generating parameters.

    Writes the data file plus a manifest carrying the model config and
    seed; identical arguments give byte-identical files.  Returns the data
    file path.
    """
    model = build_model(model_dict)
    rng = stream(seed, STREAM_DATA)
    kind = model_dict["kind"]
    if kind == "gaussian":
        data = ObservedData.vector(model.synthesize(rng))
    else:
        data = ObservedData.graph(model.synthesize(rng))
    path = os.path.join(out_dir, DATA_FILENAMES[kind])
    write_observed(path, data)
    write_manifest(os.path.join(out_dir, "data_manifest.json"), {
        "model": model_dict,
        "seed": seed,
        "path": os.path.basename(path),
        "sha256": file_sha256(path),
        "versions": versions(),
    })
    return path


def _replicate_dir(out_dir, rep):
    return os.path.join(out_dir, f"replicate_{rep:03d}")


def run_replicate(cfg_dict, rep, budget_override=None):
    """Run one replicate and persist its result files; returns the summary row."""
    cfg = RunConfig.from_dict(cfg_dict)
    model = build_model(cfg.model)
    data = read_observed(cfg.data_path, DATA_KINDS[cfg.model["kind"]])
    y = data.values
    rep_dir = _replicate_dir(cfg.out_dir, rep)
    started = time.time()
    if cfg.algorithm == "abc-mcmc":
        if cfg.mcmc_epsilon is None:
            raise ContractError("abc-mcmc needs an explicit tolerance")
        thetas, acceptance = run_abc_mcmc(
            model, y, cfg.mcmc_epsilon, cfg.mcmc_iterations,
            cfg.mcmc_proposal_scale, cfg.seed, rep,
        )
        weights = np.full(len(thetas), 1.0 / len(thetas))
        post_mean = thetas.mean(axis=0)
        row = {
            "replicate": rep,
            "stop_reason": "iterations",
            "failed": False,
            "final_epsilon": cfg.mcmc_epsilon,
            "log_evidence": float("nan"),
            "steps": cfg.mcmc_iterations,
            "acceptance": acceptance,
            "elapsed_seconds": time.time() - started,
        }
        schedule_rows = []
        theta_components = thetas
    else:
        scfg = sampler_config(cfg, rep, budget_override)
        runner = run_re_abc_smc2 if cfg.algorithm == "re-abc-smc2" else run_abc_smc
        out = runner(model, y, scfg)
        weights = out.weights
        theta_components = out.theta_components
        post_mean = out.posterior_mean()
        row = {
            "replicate": rep,
            "stop_reason": out.stop_reason,
            "failed": out.failed,
            "final_epsilon": float(out.final_epsilon),
            "log_evidence": float(out.log_evidence),
            "steps": len(out.schedule),
            "acceptance": float(out.schedule[-1].acceptance) if out.schedule else float("nan"),
            "elapsed_seconds": out.elapsed_seconds,
        }
        schedule_rows = out.schedule
    for name, value in zip(model.param_names, post_mean):
        row[f"posterior_mean_{name}"] = float(value)
    atomic_write_text(
        os.path.join(rep_dir, "particles.csv"),
        particles_csv(theta_components, weights, model.param_names),
    )
    atomic_write_text(os.path.join(rep_dir, "schedule.csv"), schedule_csv(schedule_rows))
    write_manifest(os.path.join(rep_dir, "manifest.json"), {
        "algorithm": cfg.algorithm,
        "config": cfg.to_dict(),
        "replicate": rep,
        "budget_override_seconds": budget_override,
        "data_sha256": file_sha256(cfg.data_path),
        "result": row,
        "versions": versions(),
    })
    return row


def _resolve_budgets(cfg):
    """Per-replicate wall-clock budgets from a reference run's summary."""
    if cfg.budget_match is None:
        return [None] * cfg.replicates
    path = cfg.budget_match
    if os.path.isdir(path):
        path = os.path.join(path, "summary.json")
    reference = read_manifest(path)
    elapsed = [r["elapsed_seconds"] for r in reference["replicates"] if not r["failed"]]
    if not elapsed:
        raise ContractError("budget-match reference has no successful replicates")
    if len(elapsed) == cfg.replicates:
        return list(elapsed)
    mean = float(np.mean(elapsed))
    return [mean] * cfg.replicates


def run_experiment(cfg):
    """Run all replicates of one configuration; returns the summary dict.

    The summary (also written to ``summary.json``) carries one row per
    replicate; a replicate that raises is recorded as failed without
    stopping the others.
    """
    if cfg.data_path is None or not os.path.exists(cfg.data_path):
        raise ContractError("observed-data file not found; run synthesize first")
    budgets = _resolve_budgets(cfg)
    cfg_dict = cfg.to_dict()
    rows = [None] * cfg.replicates

    def record(rep, outcome, error=None):
        if error is not None:
            rows[rep] = {"replicate": rep, "failed": True, "error": str(error)}
        else:
            rows[rep] = outcome

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                rep: pool.submit(run_replicate, cfg_dict, rep, budgets[rep])
                for rep in range(cfg.replicates)
            }
            for rep, fut in futures.items():
                try:
                    record(rep, fut.result())
                except Exception as err:  # noqa: BLE001 - recorded per replicate
                    record(rep, None, err)
    else:
        for rep in range(cfg.replicates):
            try:
                record(rep, run_replicate(cfg_dict, rep, budgets[rep]))
            except Exception as err:  # noqa: BLE001 - recorded per replicate
                record(rep, None, err)

    summary = {
        "algorithm": cfg.algorithm,
        "config": cfg_dict,
        "data_sha256": file_sha256(cfg.data_path),
        "replicates": rows,
        "versions": versions(),
    }
    write_manifest(os.path.join(cfg.out_dir, "summary.json"), summary)
    return summary


STAT_ORDER_SUFFIX = ("log_evidence", "final_epsilon", "steps", "elapsed_seconds")


def summarize(result_dirs, out_dir):
    """Aggregate experiment summaries into plot-ready long-format CSVs.

    ``statistics.csv`` holds (algorithm, replicate, statistic, value) rows
    and ``schedules.csv`` holds (algorithm, replicate, step, epsilon)
    rows.  Experiments over different observed data or models are
    incompatible; the error names the mismatched fields.
    """
    summaries = []
    for d in result_dirs:
        summaries.append((d, read_manifest(os.path.join(d, "summary.json"))))
    if not summaries:
        raise ContractError("nothing to summarize")
    _check_compatible(summaries)

    stat_lines = ["algorithm,replicate,statistic,value"]
    sched_lines = ["algorithm,replicate,step,epsilon"]
    for d, summary in summaries:
        algorithm = summary["algorithm"]
        mean_keys = sorted(
            k for r in summary["replicates"] if r and not r.get("failed")
            for k in r if k.startswith("posterior_mean_")
        )
        mean_keys = list(dict.fromkeys(mean_keys))
        for row in summary["replicates"]:
            if row is None or row.get("failed"):
                continue
            rep = row["replicate"]
            for key in mean_keys:
                stat_lines.append(f"{algorithm},{rep},{key},{row[key]!r}")
            for key in STAT_ORDER_SUFFIX:
                stat_lines.append(f"{algorithm},{rep},{key},{float(row[key])!r}")
            sched_path = os.path.join(_replicate_dir(d, rep), "schedule.csv")
            if os.path.exists(sched_path):
                with open(sched_path) as fh:
                    header = fh.readline().strip().split(",")
                    i_step, i_eps = header.index("step"), header.index("epsilon")
                    for line in fh:
                        parts = line.strip().split(",")
                        if parts and parts[0]:
                            sched_lines.append(
                                f"{algorithm},{rep},{parts[i_step]},{parts[i_eps]}"
                            )
    atomic_write_text(os.path.join(out_dir, "statistics.csv"), "\n".join(stat_lines) + "\n")
    atomic_write_text(os.path.join(out_dir, "schedules.csv"), "\n".join(sched_lines) + "\n")
    return (
        os.path.join(out_dir, "statistics.csv"),
        os.path.join(out_dir, "schedules.csv"),
    )


def _check_compatible(summaries):
    _, first = summaries[0]
    mismatched = set()
    for _, other in summaries[1:]:
        if other["data_sha256"] != first["data_sha256"]:
            mismatched.add("data_sha256")
        a, b = first["config"]["model"], other["config"]["model"]
        for key in set(a) | set(b):
            if a.get(key) != b.get(key):
                mismatched.add(f"model.{key}")
    if mismatched:
        raise ContractError(
            "incompatible experiment summaries; mismatched fields: "
            + ", ".join(sorted(mismatched))
        )

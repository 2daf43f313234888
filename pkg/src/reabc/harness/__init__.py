"""Experiment harness: configuration, persistence, replication, CLI."""

from .config import PRESETS, RunConfig, build_model, load_config, sampler_config
from .experiment import run_experiment, run_replicate, summarize, synthesize_data

__all__ = [
    "PRESETS",
    "RunConfig",
    "build_model",
    "load_config",
    "sampler_config",
    "run_experiment",
    "run_replicate",
    "summarize",
    "synthesize_data",
]

"""Benchmark simulator models and their verification oracles."""

from .gaussian import (
    GaussianModel,
    GaussianModelConfig,
    gaussian_distance,
    gaussian_posterior_oracle,
    gaussian_transform,
    rare_event_probability,
)
from .graph import (
    Graph,
    GraphModel,
    GraphModelConfig,
    dd_grow,
    graph_from_text,
    graph_to_text,
    seed_edge_flip_move,
    seed_graph_sample,
    spectral_distance,
)

__all__ = [
    "GaussianModel",
    "GaussianModelConfig",
    "gaussian_transform",
    "gaussian_distance",
    "gaussian_posterior_oracle",
    "rare_event_probability",
    "Graph",
    "GraphModel",
    "GraphModelConfig",
    "seed_graph_sample",
    "dd_grow",
    "spectral_distance",
    "seed_edge_flip_move",
    "graph_to_text",
    "graph_from_text",
]

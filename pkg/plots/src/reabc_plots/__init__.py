"""Batch figures from reabc experiment CSVs."""

from .figures import PlotSpec, SchemaError, plot_box, plot_schedule, render

__all__ = ["PlotSpec", "SchemaError", "plot_schedule", "plot_box", "render"]
__version__ = "0.1.0"

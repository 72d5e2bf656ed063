"""Figure rendering for the rounding-error experiment CSVs."""

from .csvdata import SchemaError, load_table
from .plots import PlotResult, plot_depth, plot_placement, plot_scaling, render

__all__ = ["SchemaError", "load_table", "PlotResult", "plot_depth",
           "plot_placement", "plot_scaling", "render"]

__version__ = "0.1.0"

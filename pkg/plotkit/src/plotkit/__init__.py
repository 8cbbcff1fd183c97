"""Rendering for aidlab CSV artifacts: basin maps, learning curves,
price trajectories, and cost-component figures."""

from .io import EmptyInput, PlotKitError, SchemaMismatch
from .render import PlotJob, RenderResult, render

__version__ = "0.1.0"
__all__ = ["PlotJob", "RenderResult", "render", "PlotKitError",
           "SchemaMismatch", "EmptyInput"]

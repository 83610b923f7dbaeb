"""Batch rendering of convergence, contraction, and residual figures from
spmelab's CSV/JSONL artifacts."""

__version__ = "0.1.0"

from .render import FigureSpec, RenderError, build_figure, load_spec, render

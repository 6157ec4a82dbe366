"""Static figure rendering for stable-moe simulation artifacts."""

__version__ = "0.1.0"

from .figures import FIGURE_KINDS, FigureSpec, RenderError, RenderResult, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "RenderError", "RenderResult", "render"]

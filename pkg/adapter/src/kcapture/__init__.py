"""Torch-side capture of activation traces plus a differentiable volatility penalty."""

from .capture import CaptureSpec, LayerCapture, capture
from .dumpio import MetricDecl, write_kcd1
from .penalty import kcreg_penalty

__version__ = "0.1.0"

__all__ = [
    "CaptureSpec",
    "LayerCapture",
    "MetricDecl",
    "capture",
    "kcreg_penalty",
    "write_kcd1",
]

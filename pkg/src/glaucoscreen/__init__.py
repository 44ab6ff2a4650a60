"""Fundus glaucoma screening: global, ROI and dynamic-window branches fused into one classifier."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

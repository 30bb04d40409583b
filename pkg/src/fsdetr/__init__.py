"""Differentiable numpy kernels for frequency-spatial small-object detection blocks."""

from .tensor import ShapeError, Tape, Tensor, backward
from .gradcheck import GradReport, grad_check

__version__ = "0.1.0"

__all__ = ["ShapeError", "Tape", "Tensor", "backward", "GradReport", "grad_check", "__version__"]

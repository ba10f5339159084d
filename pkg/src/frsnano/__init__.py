"""Tiny numpy autodiff, a three-branch attention block, a dynamic upsampler and a toy detector."""

from .tensor import ShapeError, Tensor, backward, grad

__version__ = "0.1.0"

__all__ = ["ShapeError", "Tensor", "backward", "grad", "__version__"]

"""Desk-scale simulator of differentially private federated GAN training."""

from .tensor import NumericError, ParamSet, ShapeError, Tensor

__version__ = "0.1.0"

__all__ = [
    "NumericError",
    "ParamSet",
    "ShapeError",
    "Tensor",
]

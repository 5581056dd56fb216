"""Input validation helpers shared by the estimator-style interfaces."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["check_images", "check_labels"]

IMAGE_HW = 28
_PIXELS = IMAGE_HW * IMAGE_HW


def check_images(x, name: str = "X") -> np.ndarray:
    """Coerce to a float64 [n,1,28,28] array with values in [0,1].

    Accepts [n,1,28,28], [n,28,28] or [n,784] layouts, plus Tensor input.
    """
    if isinstance(x, Tensor):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == _PIXELS:
        x = x.reshape(x.shape[0], 1, IMAGE_HW, IMAGE_HW)
    elif x.ndim == 3 and x.shape[1:] == (IMAGE_HW, IMAGE_HW):
        x = x.reshape(x.shape[0], 1, IMAGE_HW, IMAGE_HW)
    if x.ndim != 4 or x.shape[1:] != (1, IMAGE_HW, IMAGE_HW):
        raise ValueError(
            f"{name} must be [n,1,{IMAGE_HW},{IMAGE_HW}], [n,{IMAGE_HW},{IMAGE_HW}] "
            f"or [n,{_PIXELS}], got shape {x.shape}"
        )
    if x.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{name} pixel values must lie in [0, 1]")
    return np.ascontiguousarray(x)


def check_labels(y, n: int, num_classes: int | None = None, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise ValueError(f"{name} must be integer class ids")
        y = rounded
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError(f"{name} contains negative class ids")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ValueError(f"{name} contains class id >= {num_classes}")
    return y

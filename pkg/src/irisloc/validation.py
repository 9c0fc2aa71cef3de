"""Input validation helpers.

Every public entry point funnels its array arguments through one of these
functions so that the rest of the code can assume well-formed numpy input.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_gray_image(img, name="image", copy=False) -> np.ndarray:
    """Return ``img`` as a 2-D float64 array with values in [0, 1]."""
    arr = np.array(img, dtype=np.float64, copy=copy) if copy else np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_binary_mask(mask, name="mask") -> np.ndarray:
    """Return ``mask`` as a 2-D boolean array.

    Integer or float masks are accepted when they only hold 0 and 1 (or 0 and
    255, the PGM convention).
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr
    values = np.unique(arr)
    if not np.all(np.isin(values, (0, 1, 255))):
        raise ValueError(f"{name} must be binary")
    return arr > 0


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"shape mismatch between {label}: {shapes}")


def check_points(points, min_points=1, name="points") -> np.ndarray:
    """Return ``points`` as an ``(n, 2)`` float64 array of (x, y) rows."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or (arr.size and arr.shape[1] != 2):
        raise ShapeError(f"{name} must have shape (n, 2), got {arr.shape}")
    if len(arr) < min_points:
        raise ValueError(f"{name} needs at least {min_points} point(s), got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_tensor(x, name="tensor") -> np.ndarray:
    """Return ``x`` as a finite ``(C, H, W)`` float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be (channels, height, width), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr

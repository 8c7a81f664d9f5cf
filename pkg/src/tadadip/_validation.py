"""Input validation shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError
from .tomo import Geometry

__all__ = ["check_geometry", "check_volume", "check_sinogram"]


def check_geometry(geometry) -> Geometry:
    if not isinstance(geometry, Geometry):
        raise TypeError(f"expected a Geometry, got {type(geometry).__name__}")
    return geometry


def _finite_float(arr, name):
    arr = np.asarray(arr)
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_volume(x, geometry: Geometry | None = None, name: str = "volume") -> np.ndarray:
    """Return ``x`` as a finite float32 (z, y, x) array, matching ``geometry`` if given."""
    arr = _finite_float(x, name)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (z, y, x), got shape {arr.shape}")
    if geometry is not None and arr.shape != geometry.volume_shape:
        raise ShapeError(f"{name} shape {arr.shape} does not match geometry {geometry.volume_shape}")
    return arr


def check_sinogram(y, geometry: Geometry, name: str = "sinogram") -> np.ndarray:
    """Return ``y`` as a finite float32 (slice, view, bin) array matching ``geometry``."""
    arr = _finite_float(y, name)
    if arr.shape != geometry.sinogram_shape:
        raise ShapeError(f"{name} shape {arr.shape} does not match geometry {geometry.sinogram_shape}")
    return arr

"""Volume normalization and resampling."""

from __future__ import annotations

import numpy as np

from ..autodiff import _apply_axis, linear_interp_matrix

__all__ = ["normalize_volume", "resize_trilinear"]


def normalize_volume(x) -> np.ndarray:
    """Rescale to [0, 1] by min and max; a constant volume maps to zeros."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(x.shape, dtype=dtype)
    return ((x - lo) / (hi - lo)).astype(dtype, copy=False)


def resize_trilinear(x, new_shape) -> np.ndarray:
    """Trilinear resampling to ``new_shape`` with half-pixel centres and edge clamping."""
    x = np.asarray(x)
    new_shape = tuple(int(s) for s in new_shape)
    if len(new_shape) != x.ndim:
        raise ValueError(f"new shape {new_shape} has {len(new_shape)} axes, volume has {x.ndim}")
    if any(s < 1 for s in new_shape):
        raise ValueError(f"new shape entries must be >= 1, got {new_shape}")
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    out = x.astype(np.float64)
    for axis, (old, new) in enumerate(zip(x.shape, new_shape)):
        if old != new:
            out = _apply_axis(out, linear_interp_matrix(old, new), axis)
    return np.ascontiguousarray(out).astype(dtype, copy=False)

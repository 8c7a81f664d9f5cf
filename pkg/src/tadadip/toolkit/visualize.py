"""Maximum intensity projections and 8-bit PGM export."""

from __future__ import annotations

import numpy as np

from .io import _atomic_write

__all__ = ["mip", "save_pgm"]

_AXES = {"z": 0, "y": 1, "x": 2}


def mip(x, axis: str = "z", threshold: float = 0.45) -> np.ndarray:
    """Zero voxels below ``threshold``, then take the maximum along ``axis``."""
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    x = np.asarray(x)
    kept = np.where(x >= threshold, x, 0)
    return kept.max(axis=_AXES[axis])


def save_pgm(path, image, vmin: float = 0.0, vmax: float = 1.0) -> None:
    """Write a 2-D array as a binary 8-bit portable graymap."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {image.shape}")
    if vmax <= vmin:
        raise ValueError("vmax must exceed vmin")
    scaled = np.clip((image - vmin) / (vmax - vmin), 0.0, 1.0)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())

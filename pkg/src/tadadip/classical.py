"""Total variation and the ASD-POCS reconstruction baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tomo import Geometry, _check_sinogram

__all__ = [
    "TV_EPS",
    "AsdPocsConfig",
    "AsdPocsResult",
    "total_variation",
    "tv_gradient",
    "tv_descent_step",
    "asd_pocs",
    "sart",
]

log = logging.getLogger(__name__)

TV_EPS = 1e-8


def _forward_diffs(x: np.ndarray):
    # zero-gradient boundary: the last difference along each axis is 0
    diffs = []
    for axis in range(x.ndim):
        d = np.zeros_like(x)
        lead = [slice(None)] * x.ndim
        lead[axis] = slice(0, -1)
        d[tuple(lead)] = np.diff(x, axis=axis)
        diffs.append(d)
    return diffs


def total_variation(x, eps: float = TV_EPS) -> float:
    """Smoothed isotropic TV: sum of sqrt(dz^2 + dy^2 + dx^2 + eps^2) over voxels."""
    x = np.asarray(x, dtype=np.float64)
    sq = sum(d * d for d in _forward_diffs(x))
    return float(np.sqrt(sq + eps * eps).sum())


def tv_gradient(x, eps: float = TV_EPS) -> np.ndarray:
    """Gradient of :func:`total_variation` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    diffs = _forward_diffs(x)
    mag = np.sqrt(sum(d * d for d in diffs) + eps * eps)
    grad = np.zeros_like(x)
    for axis, d in enumerate(diffs):
        flux = d / mag
        # adjoint of the forward difference: -flux[i] + flux[i-1]
        grad -= flux
        lead = [slice(None)] * x.ndim
        tail = [slice(None)] * x.ndim
        lead[axis] = slice(1, None)
        tail[axis] = slice(0, -1)
        grad[tuple(lead)] += flux[tuple(tail)]
    return grad


def tv_descent_step(x, step: float, eps: float = TV_EPS) -> np.ndarray:
    """One step along the unit-normalized negative TV gradient."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x)
    grad = tv_gradient(x, eps)
    norm = np.linalg.norm(grad)
    if norm == 0 or not np.isfinite(norm):
        return x.copy()
    return (x - step * grad / norm).astype(x.dtype, copy=False)


@dataclass(frozen=True)
class AsdPocsConfig:
    """ASD-POCS settings; ``relaxation`` is the SART step, decayed each iteration.

    Each iteration's TV step is ``tv_step_fraction`` times the size of that
    iteration's data-consistency update; the fraction is shrunk by
    ``tv_step_decay`` whenever the TV phase moves the volume more than
    ``max_tv_ratio`` times the data phase did.
    """

    iterations: int = 500
    num_subsets: int = 30
    tv_steps_per_iter: int = 50
    relaxation: float = 1.0
    relaxation_decay: float = 0.995
    tv_step_fraction: float = 0.2
    tv_step_decay: float = 0.95
    max_tv_ratio: float = 0.95
    nonnegativity: bool = True

    def __post_init__(self):
        if self.iterations < 1 or self.num_subsets < 1:
            raise ValueError("iterations and num_subsets must be >= 1")
        if self.tv_steps_per_iter < 0:
            raise ValueError("tv_steps_per_iter must be >= 0")
        if not 0 < self.relaxation < 2:
            raise ValueError(f"relaxation must lie in (0, 2), got {self.relaxation}")


@dataclass
class AsdPocsResult:
    volume: np.ndarray
    data_residual: list[float]
    tv_value: list[float]
    # residual right after each data-update phase, before the TV steps
    data_phase_residual: list[float]

    def trace_rows(self):
        for k, (r, tv) in enumerate(zip(self.data_residual, self.tv_value), start=1):
            yield {"iteration": k, "data_residual": r, "tv_value": tv}


class _SubsetSystem:
    """Per-subset blocks of the system matrix with SART normalizers."""

    def __init__(self, g: Geometry, num_subsets: int, dtype):
        a = g.matrix(dtype)
        nd = g.num_det
        num_subsets = min(num_subsets, g.num_views)
        self.blocks = []
        for s in range(num_subsets):
            views = np.arange(s, g.num_views, num_subsets)
            rows = (views[:, None] * nd + np.arange(nd)[None, :]).ravel()
            block = a[rows]
            row_sum = np.asarray(block.sum(axis=1)).ravel()
            col_sum = np.asarray(block.sum(axis=0)).ravel()
            inv_row = np.where(row_sum > 0, 1.0 / np.where(row_sum > 0, row_sum, 1), 0).astype(dtype)
            inv_col = np.where(col_sum > 0, 1.0 / np.where(col_sum > 0, col_sum, 1), 0).astype(dtype)
            self.blocks.append((views, block, block.T.tocsr(), inv_row, inv_col))

    def sweep(self, f: np.ndarray, y: np.ndarray, relax: float, nonneg: bool) -> None:
        """One pass of SART updates over all subsets, in place on (pixels, slices) ``f``."""
        for views, block, block_t, inv_row, inv_col in self.blocks:
            meas = y[:, views, :].reshape(y.shape[0], -1).T
            resid = (meas - block @ f) * inv_row[:, None]
            f += relax * (block_t @ resid) * inv_col[:, None]
            if nonneg:
                np.maximum(f, 0, out=f)


def _residual(f_cols: np.ndarray, y: np.ndarray, g: Geometry) -> float:
    proj = (g.matrix(f_cols.dtype) @ f_cols).T.reshape(y.shape)
    return float(np.linalg.norm((proj - y).ravel()))


def asd_pocs(y, g: Geometry, cfg: AsdPocsConfig | None = None, callback=None) -> AsdPocsResult:
    """Adaptive-steepest-descent POCS reconstruction from a zero initial volume.

    Each iteration runs one pass of subset SART updates, clamps to
    nonnegative values if requested, then takes ``tv_steps_per_iter`` TV
    descent steps whose size adapts to the magnitude of the data update,
    and clamps again.
    """
    cfg = cfg or AsdPocsConfig()
    y = _check_sinogram(y, g).astype(np.float64, copy=False)
    dtype = np.float64
    system = _SubsetSystem(g, cfg.num_subsets, dtype)
    nz, n = g.num_slices, g.image_size
    f = np.zeros((n * n, nz), dtype=dtype)
    relax = cfg.relaxation
    fraction = cfg.tv_step_fraction
    residuals, tvs, phase_res = [], [], []
    for it in range(cfg.iterations):
        f_prev = f.copy()
        system.sweep(f, y, relax, cfg.nonnegativity)
        if cfg.nonnegativity:
            np.maximum(f, 0, out=f)
        phase_res.append(_residual(f, y, g))
        data_move = float(np.linalg.norm(f - f_prev))
        if cfg.tv_steps_per_iter > 0:
            tv_step = fraction * data_move
            vol = f.T.reshape(g.volume_shape)
            before = vol.copy()
            if tv_step > 0:
                for _ in range(cfg.tv_steps_per_iter):
                    vol = tv_descent_step(vol, tv_step)
            tv_move = float(np.linalg.norm(vol - before))
            if tv_move > cfg.max_tv_ratio * data_move:
                fraction *= cfg.tv_step_decay
            if cfg.nonnegativity:
                np.maximum(vol, 0, out=vol)
            f = np.ascontiguousarray(vol.reshape(nz, -1).T)
        relax *= cfg.relaxation_decay
        residuals.append(_residual(f, y, g))
        vol_now = f.T.reshape(g.volume_shape)
        tvs.append(total_variation(vol_now))
        if callback is not None:
            callback(it + 1, vol_now)
        log.debug("asd-pocs iter %d residual %.4g tv %.4g", it + 1, residuals[-1], tvs[-1])
    volume = np.ascontiguousarray(f.T).reshape(g.volume_shape).astype(np.float32)
    return AsdPocsResult(volume, residuals, tvs, phase_res)


def sart(y, g: Geometry, iterations: int, num_subsets: int = 30, relaxation: float = 1.0,
         relaxation_decay: float = 0.995, nonnegativity: bool = True) -> np.ndarray:
    """Ordered-subset SART with the same update and relaxation schedule as :func:`asd_pocs`."""
    y = _check_sinogram(y, g).astype(np.float64, copy=False)
    system = _SubsetSystem(g, num_subsets, np.float64)
    f = np.zeros((g.image_size ** 2, g.num_slices))
    relax = relaxation
    for _ in range(iterations):
        system.sweep(f, y, relax, nonnegativity)
        relax *= relaxation_decay
    return np.ascontiguousarray(f.T).reshape(g.volume_shape).astype(np.float32)

"""Image quality metrics: PSNR and SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["MetricReport", "psnr", "ssim", "ssim3d", "evaluate"]

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    data_range: float

    def __post_init__(self):
        if self.ssim > 1.0:
            raise ValueError(f"ssim cannot exceed 1, got {self.ssim}")


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    x, ref = _pair(x, ref)
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_taps() -> np.ndarray:
    r = np.arange(WINDOW) - WINDOW // 2
    w = np.exp(-(r * r) / (2 * SIGMA ** 2))
    return w / w.sum()


def _ssim_map(x, ref, data_range, axes):
    taps = _gaussian_taps()

    def blur(a):
        for ax in axes:
            a = correlate1d(a, taps, axis=ax, mode="reflect")
        return a

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = blur(x), blur(ref)
    sxx = blur(x * x) - mx * mx
    syy = blur(ref * ref) - my * my
    sxy = blur(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    # keep only positions whose window lies fully inside the image
    pad = WINDOW // 2
    crop = [slice(None)] * x.ndim
    for ax in axes:
        crop[ax] = slice(pad, x.shape[ax] - pad)
    return smap[tuple(crop)]


def ssim(x, ref, data_range: float = 1.0) -> float:
    """Mean SSIM over axial slices (11x11 Gaussian window, sigma 1.5)."""
    x, ref = _pair(x, ref)
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    if x.ndim != 3:
        raise ValueError(f"ssim expects a 2-D image or 3-D volume, got {x.ndim}-D")
    if min(x.shape[1:]) < WINDOW:
        raise ValueError(f"slices of {x.shape[1:]} are smaller than the {WINDOW}x{WINDOW} window")
    return float(_ssim_map(x, ref, data_range, axes=(1, 2)).mean())


def ssim3d(x, ref, data_range: float = 1.0) -> float:
    """SSIM with a separable 11^3 Gaussian window over the whole volume."""
    x, ref = _pair(x, ref)
    if x.ndim != 3 or min(x.shape) < WINDOW:
        raise ValueError(f"ssim3d needs a 3-D volume at least {WINDOW} voxels per side")
    return float(_ssim_map(x, ref, data_range, axes=(0, 1, 2)).mean())


def evaluate(x, ref, data_range: float = 1.0) -> MetricReport:
    return MetricReport(psnr(x, ref, data_range), ssim(x, ref, data_range), data_range)

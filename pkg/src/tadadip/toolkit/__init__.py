"""Phantoms, preprocessing, metrics, persistence and visualization helpers."""

from .io import FormatError, VolumeHeader, load_volume, save_volume
from .metrics import MetricReport, evaluate, psnr, ssim, ssim3d
from .phantoms import disk_phantom, shepp_logan_3d
from .preprocessing import normalize_volume, resize_trilinear
from .visualize import mip, save_pgm

__all__ = [
    "FormatError",
    "VolumeHeader",
    "load_volume",
    "save_volume",
    "MetricReport",
    "evaluate",
    "psnr",
    "ssim",
    "ssim3d",
    "disk_phantom",
    "shepp_logan_3d",
    "normalize_volume",
    "resize_trilinear",
    "mip",
    "save_pgm",
]

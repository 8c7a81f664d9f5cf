"""Training-free 3D CT reconstruction with untrained U-Net priors.

Submodules: ``autodiff`` (numpy reverse-mode engine), ``unet``, ``tomo``
(parallel-beam projector and FBP), ``classical`` (TV / ASD-POCS), ``engine``
(DIP optimization loops), ``toolkit`` (phantoms, metrics, I/O) and ``cli``.
"""

from .autodiff import ShapeError
from .classical import AsdPocsConfig, asd_pocs, sart
from .engine import DivergenceError, RunTrace, TadaConfig, run_tada_dip, run_vanilla_dip
from .estimators import (
    ASDPOCSReconstructor,
    FBPReconstructor,
    TadaDIPReconstructor,
    VanillaDIPReconstructor,
)
from .tomo import Geometry, back_project, fbp, forward_project, simulate_measurements
from .unet import UNet, UNetConfig, build_unet

__version__ = "0.1.0"

__all__ = [
    "ShapeError",
    "AsdPocsConfig",
    "asd_pocs",
    "sart",
    "DivergenceError",
    "RunTrace",
    "TadaConfig",
    "run_tada_dip",
    "run_vanilla_dip",
    "ASDPOCSReconstructor",
    "FBPReconstructor",
    "TadaDIPReconstructor",
    "VanillaDIPReconstructor",
    "Geometry",
    "back_project",
    "fbp",
    "forward_project",
    "simulate_measurements",
    "UNet",
    "UNetConfig",
    "build_unet",
]

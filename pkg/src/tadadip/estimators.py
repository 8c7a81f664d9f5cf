"""scikit-learn style wrappers around the reconstruction routines.

Each reconstructor is configured by constructor parameters (so
``get_params``/``set_params``/``clone`` work), ``fit`` takes a sinogram and
stores ``reconstruction_``, and ``transform`` returns a reconstruction.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import classical, engine, tomo
from ._validation import check_geometry, check_sinogram, check_volume
from .toolkit.metrics import psnr
from .unet import UNetConfig

__all__ = [
    "FBPReconstructor",
    "ASDPOCSReconstructor",
    "VanillaDIPReconstructor",
    "TadaDIPReconstructor",
]


class _Reconstructor(TransformerMixin, BaseEstimator):
    def _reconstruct(self, y, ground_truth):
        raise NotImplementedError

    def fit(self, y, ground_truth=None):
        g = check_geometry(self.geometry)
        y = check_sinogram(y, g)
        if ground_truth is not None:
            ground_truth = check_volume(ground_truth, g, name="ground_truth")
        self.geometry_ = g
        self.reconstruction_ = self._reconstruct(y, ground_truth)
        return self

    def transform(self, y):
        """Reconstruct ``y``; iterative methods refit on every call."""
        return self.fit(y).reconstruction_

    def fit_transform(self, y, ground_truth=None, **fit_params):
        return self.fit(y, ground_truth).reconstruction_

    def score(self, y, ground_truth):
        """PSNR (dB) of the reconstruction of ``y`` against ``ground_truth``."""
        check_is_fitted(self, "reconstruction_")
        return psnr(self.reconstruction_, check_volume(ground_truth, self.geometry_))


class FBPReconstructor(_Reconstructor):
    def __init__(self, geometry=None, filter="ramlak"):
        self.geometry = geometry
        self.filter = filter

    def _reconstruct(self, y, ground_truth):
        return tomo.fbp(y, self.geometry_, self.filter)


class ASDPOCSReconstructor(_Reconstructor):
    def __init__(self, geometry=None, iterations=500, num_subsets=30, tv_steps_per_iter=50,
                 relaxation=1.0, relaxation_decay=0.995, tv_step_fraction=0.2, nonnegativity=True):
        self.geometry = geometry
        self.iterations = iterations
        self.num_subsets = num_subsets
        self.tv_steps_per_iter = tv_steps_per_iter
        self.relaxation = relaxation
        self.relaxation_decay = relaxation_decay
        self.tv_step_fraction = tv_step_fraction
        self.nonnegativity = nonnegativity

    def _reconstruct(self, y, ground_truth):
        cfg = classical.AsdPocsConfig(
            iterations=self.iterations, num_subsets=self.num_subsets,
            tv_steps_per_iter=self.tv_steps_per_iter, relaxation=self.relaxation,
            relaxation_decay=self.relaxation_decay, tv_step_fraction=self.tv_step_fraction,
            nonnegativity=self.nonnegativity,
        )
        result = classical.asd_pocs(y, self.geometry_, cfg)
        self.result_ = result
        return result.volume


class TadaDIPReconstructor(_Reconstructor):
    """Tada-DIP; ``trace_`` holds the per-evaluation record after fitting."""

    def __init__(self, geometry=None, alpha=0.5, beta=1e-2, gamma=1e-2, p=1, iterations=4000,
                 learning_rate=1e-3, ema_decay=0.99, seed=0, eval_every=50, depth=3, base_channels=8):
        self.geometry = geometry
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.p = p
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.seed = seed
        self.eval_every = eval_every
        self.depth = depth
        self.base_channels = base_channels

    def _config(self) -> engine.TadaConfig:
        return engine.TadaConfig(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma, p=self.p, iterations=self.iterations,
            learning_rate=self.learning_rate, ema_decay=self.ema_decay, seed=self.seed,
            eval_every=self.eval_every, unet=UNetConfig(depth=self.depth, base_channels=self.base_channels),
        )

    def _reconstruct(self, y, ground_truth):
        result = engine.run_tada_dip(y, self.geometry_, self._config(), ground_truth)
        self.trace_ = result.trace
        return result.volume


class VanillaDIPReconstructor(_Reconstructor):
    def __init__(self, geometry=None, p=1, iterations=4000, learning_rate=1e-3, ema_decay=0.99,
                 seed=0, eval_every=50, depth=3, base_channels=8):
        self.geometry = geometry
        self.p = p
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.seed = seed
        self.eval_every = eval_every
        self.depth = depth
        self.base_channels = base_channels

    def _reconstruct(self, y, ground_truth):
        cfg = engine.TadaConfig(
            p=self.p, iterations=self.iterations, learning_rate=self.learning_rate,
            ema_decay=self.ema_decay, seed=self.seed, eval_every=self.eval_every,
            unet=UNetConfig(depth=self.depth, base_channels=self.base_channels),
        )
        result = engine.run_vanilla_dip(y, self.geometry_, cfg, ground_truth)
        self.trace_ = result.trace
        return result.volume

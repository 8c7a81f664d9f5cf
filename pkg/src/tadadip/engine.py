"""Deep-image-prior optimizers: Adam, output EMA, Vanilla DIP and Tada-DIP.

Tada-DIP iteration (z is the network input, f the U-Net):

1. sigma = alpha * max|z|
2. eta ~ N(0, sigma^2 I)
3. x_hat = f(z + eta)
4. L = ||y - A x_hat||_p^p + beta * ||z - x_hat||_p^p
5. Adam step on the network parameters
6. z = (1 - gamma) z + gamma x_hat

Vanilla DIP is the same loop with alpha = beta = gamma = 0.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, Tape, backward, clear_grads, elementwise, reduce
from .tomo import Geometry, ProjectorOp, _check_sinogram
from .unet import UNet, UNetConfig, build_unet

__all__ = [
    "DivergenceError",
    "TadaConfig",
    "AdamState",
    "EmaState",
    "TraceRecord",
    "RunTrace",
    "LossTerms",
    "IterationState",
    "DipResult",
    "adam_step",
    "ema_update",
    "noise_sigma",
    "tada_loss",
    "tada_loss_terms",
    "input_update",
    "run_vanilla_dip",
    "run_tada_dip",
]

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """A loss or gradient became non-finite during optimization."""


@dataclass(frozen=True)
class TadaConfig:
    alpha: float = 0.5
    beta: float = 1e-2
    gamma: float = 1e-2
    p: int = 1
    iterations: int = 4000
    learning_rate: float = 1e-3
    ema_decay: float = 0.99
    seed: int = 0
    eval_every: int = 50
    unet: UNetConfig = field(default_factory=UNetConfig)
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# Adam and EMA


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kwargs)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update of ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state have different lengths")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.name or i} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name or i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * step).astype(p.dtype, copy=False)
    return state


@dataclass
class EmaState:
    decay: float = 0.99
    shadow: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.decay < 1:
            raise ValueError(f"EMA decay must lie in [0, 1), got {self.decay}")


def ema_update(state: EmaState, x_hat: np.ndarray) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * x_hat; the first call copies x_hat."""
    x_hat = np.asarray(x_hat)
    if state.shadow is None:
        state.shadow = x_hat.copy()
        return state
    if state.shadow.shape != x_hat.shape:
        raise ValueError(f"EMA shape mismatch: {state.shadow.shape} vs {x_hat.shape}")
    state.shadow *= state.decay
    state.shadow += (1.0 - state.decay) * x_hat
    return state


# ---------------------------------------------------------------------------
# Tada-DIP building blocks


def noise_sigma(z, alpha: float) -> float:
    """Input-noise level alpha * max|z|."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    z = np.asarray(z)
    if z.size == 0:
        return 0.0
    return float(alpha * np.max(np.abs(z)))


class LossTerms(NamedTuple):
    total: Tensor
    data_fidelity: Tensor
    regularizer: Tensor


def _pnorm_p(r: Tensor, p: int) -> Tensor:
    return reduce("sum", elementwise("abs" if p == 1 else "square", r))


def tada_loss_terms(y, x_hat: Tensor, z, g: Geometry | ProjectorOp, beta: float, p: int = 1) -> LossTerms:
    """Data fidelity ||y - A x_hat||_p^p, regularizer ||z - x_hat||_p^p and their weighted sum.

    ``z`` is treated as a constant: no gradient flows into it.
    """
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    op = g if isinstance(g, ProjectorOp) else ProjectorOp(g)
    y_t = y if isinstance(y, Tensor) else Tensor(np.asarray(y), dtype=x_hat.dtype)
    z_arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    z_t = Tensor(z_arr.reshape(x_hat.shape), dtype=x_hat.dtype)
    data = _pnorm_p(elementwise("sub", y_t, op(x_hat)), p)
    reg = _pnorm_p(elementwise("sub", z_t, x_hat), p)
    total = elementwise("add", data, elementwise("scale", reg, factor=beta))
    return LossTerms(total, data, reg)


def tada_loss(y, x_hat: Tensor, z, g: Geometry | ProjectorOp, beta: float, p: int = 1) -> Tensor:
    """Scalar loss ||y - A x_hat||_p^p + beta ||z - x_hat||_p^p."""
    return tada_loss_terms(y, x_hat, z, g, beta, p).total


def input_update(z, x_hat, gamma: float) -> np.ndarray:
    """Blend the network input toward the (detached) output: (1 - gamma) z + gamma x_hat."""
    z = np.asarray(z)
    x_hat = np.asarray(x_hat.data if isinstance(x_hat, Tensor) else x_hat)
    if z.shape != x_hat.shape:
        raise ValueError(f"input_update shape mismatch: {z.shape} vs {x_hat.shape}")
    return (1.0 - gamma) * z + gamma * x_hat


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    loss: float
    data_fidelity: float
    regularizer: float
    psnr_ema: float = math.nan
    ssim_ema: float = math.nan


TRACE_COLUMNS = ("iteration", "loss", "data_fidelity", "regularizer", "psnr_ema", "ssim_ema")


@dataclass
class RunTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def iterations(self) -> np.ndarray:
        return self.column("iteration").astype(int)

    def write_csv(self, path) -> None:
        from .toolkit.io import atomic_write_text

        lines = [",".join(TRACE_COLUMNS)]
        for r in self.records:
            row = asdict(r)
            lines.append(",".join(_fmt(row[c]) for c in TRACE_COLUMNS))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> "RunTrace":
        trace = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.append(TraceRecord(
                    int(row["iteration"]), float(row["loss"]), float(row["data_fidelity"]),
                    float(row["regularizer"]), float(row["psnr_ema"]), float(row["ssim_ema"]),
                ))
        return trace


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


# ---------------------------------------------------------------------------
# optimization loops


@dataclass
class IterationState:
    """Per-iteration quantities handed to a run callback (arrays are not copies)."""

    iteration: int
    sigma: float
    z: np.ndarray
    eta: np.ndarray
    x_hat: np.ndarray
    z_next: np.ndarray
    loss: float
    tape: Tape
    model: UNet


class DipResult(NamedTuple):
    volume: np.ndarray
    trace: RunTrace


def _optimize(y, g: Geometry, cfg: TadaConfig, alpha: float, beta: float, gamma: float,
              ground_truth=None, callback: Callable[[IterationState], None] | None = None) -> DipResult:
    from .toolkit.io import save_volume
    from .toolkit.metrics import psnr, ssim

    y = _check_sinogram(y, g)
    if ground_truth is not None and np.shape(ground_truth) != g.volume_shape:
        raise ValueError(f"ground truth shape {np.shape(ground_truth)} does not match {g.volume_shape}")
    rng = np.random.default_rng(cfg.seed)
    model = build_unet(cfg.unet, seed=cfg.seed)
    shape = (1, 1) + g.volume_shape
    model.check_input_shape(shape)
    params = model.parameters()
    adam = AdamState.for_params(params)
    ema = EmaState(cfg.ema_decay)
    op = ProjectorOp(g)
    dtype = params[0].dtype
    y_t = Tensor(y, dtype=dtype)
    z = rng.standard_normal(shape).astype(dtype)
    # the projector cannot see voxels outside the inscribed circle, so the
    # output is restricted to that support (FBP and ASD-POCS leave them at 0)
    support = Tensor(np.broadcast_to(g.fov_mask(), shape), dtype=dtype)
    trace = RunTrace()
    zeros = np.zeros(shape, dtype=dtype)

    for it in range(1, cfg.iterations + 1):
        sigma = noise_sigma(z, alpha)
        eta = (rng.standard_normal(shape).astype(dtype) * dtype.type(sigma)) if alpha > 0 else zeros
        clear_grads(params)
        x_hat = elementwise("mul", model(Tensor(z + eta, dtype=dtype)), support)
        terms = tada_loss_terms(y_t, x_hat, z, op, beta, cfg.p)
        loss = terms.total.item()
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at iteration {it}")
        tape = backward(terms.total)
        adam_step(params, [p.grad for p in params], adam, cfg.learning_rate)
        out = x_hat.data
        ema_update(ema, out.reshape(g.volume_shape))
        z_next = input_update(z, out, gamma).astype(dtype, copy=False)
        if callback is not None:
            callback(IterationState(it, sigma, z, eta, out, z_next, loss, tape, model))
        z = z_next

        if it % cfg.eval_every == 0 or it == cfg.iterations:
            p_val = s_val = math.nan
            if ground_truth is not None:
                p_val = psnr(ema.shadow, ground_truth)
                s_val = ssim(ema.shadow, ground_truth)
            trace.append(TraceRecord(it, loss, terms.data_fidelity.item(), terms.regularizer.item(), p_val, s_val))
            log.info("iter %d loss %.6g psnr %.3f", it, loss, p_val)
        if cfg.checkpoint_every and cfg.checkpoint_path and it % cfg.checkpoint_every == 0:
            save_volume(cfg.checkpoint_path, ema.shadow)
    return DipResult(ema.shadow.astype(np.float32), trace)


def run_vanilla_dip(y, g: Geometry, cfg: TadaConfig | None = None, ground_truth=None,
                    callback=None) -> DipResult:
    """Fit a U-Net with a fixed random input to the measurements; alpha, beta, gamma are ignored."""
    cfg = cfg or TadaConfig()
    return _optimize(y, g, cfg, 0.0, 0.0, 0.0, ground_truth, callback)


def run_tada_dip(y, g: Geometry, cfg: TadaConfig | None = None, ground_truth=None,
                 callback=None) -> DipResult:
    """Run the input-adaptive, denoising-regularized DIP loop for ``cfg.iterations`` steps.

    The returned volume is the exponential moving average of the network outputs.
    """
    cfg = cfg or TadaConfig()
    return _optimize(y, g, cfg, cfg.alpha, cfg.beta, cfg.gamma, ground_truth, callback)

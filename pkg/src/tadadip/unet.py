"""3D U-Net used as the untrained image prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    concat,
    conv3d,
    elementwise,
    get_default_dtype,
    instance_norm,
    upsample_trilinear,
)

__all__ = ["UNetConfig", "UNet", "build_unet"]


@dataclass(frozen=True)
class UNetConfig:
    """Architecture knobs. Defaults are sized for desk-scale volumes (32-64 voxels per side)."""

    depth: int = 3
    base_channels: int = 8
    channel_growth: int = 2
    skip: bool = True
    in_channels: int = 1
    out_channels: int = 1
    slope: float = 0.1
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.channel_growth < 1:
            raise ValueError(f"channel_growth must be >= 1, got {self.channel_growth}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("in_channels and out_channels must be >= 1")

    def channels(self, level: int) -> int:
        return self.base_channels * self.channel_growth ** level

    @property
    def divisor(self) -> int:
        return 2 ** self.depth


class _Conv:
    def __init__(self, name, cin, cout, kernel, stride, rng, dtype):
        self.name = name
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = kernel // 2
        fan_in = cin * kernel ** 3
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel, kernel))
        b = rng.uniform(-bound, bound, size=cout)
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight", dtype=dtype)
        self.bias = Tensor(b, requires_grad=True, name=f"{name}.bias", dtype=dtype)

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)


class _Norm:
    def __init__(self, name, channels, eps, dtype):
        self.name = name
        self.channels = channels
        self.eps = eps
        self.gain = Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gain", dtype=dtype)
        self.bias = Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.bias", dtype=dtype)

    def params(self):
        return [self.gain, self.bias]

    def __call__(self, x):
        return instance_norm(x, self.gain, self.bias, self.eps)


class UNet:
    """Encoder/decoder with skip connections mapping a volume to a volume in (0, 1).

    Each level has two 3x3x3 conv + instance-norm + leaky-ReLU blocks.
    Downsampling is a stride-2 conv; upsampling is trilinear interpolation
    followed by a 1x1x1 conv, and skips are joined by channel concatenation.
    """

    def __init__(self, config: UNetConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dtype = get_default_dtype()
        cfg = config
        # (stage name, list of layers in call order); the stage name controls forward wiring
        self._stages: list[tuple[str, list]] = []

        def block(name, cin, cout):
            return [
                _Conv(f"{name}.conv1", cin, cout, 3, 1, rng, dtype),
                _Norm(f"{name}.norm1", cout, cfg.norm_eps, dtype),
                _Conv(f"{name}.conv2", cout, cout, 3, 1, rng, dtype),
                _Norm(f"{name}.norm2", cout, cfg.norm_eps, dtype),
            ]

        self._stages.append(("enc0", block("enc0", cfg.in_channels, cfg.channels(0))))
        for level in range(1, cfg.depth + 1):
            cin, cout = cfg.channels(level - 1), cfg.channels(level)
            self._stages.append((f"down{level}", [
                _Conv(f"down{level}.conv", cin, cout, 3, 2, rng, dtype),
                _Norm(f"down{level}.norm", cout, cfg.norm_eps, dtype),
            ]))
            self._stages.append((f"enc{level}", block(f"enc{level}", cout, cout)))
        for level in range(cfg.depth, 0, -1):
            cin, cout = cfg.channels(level), cfg.channels(level - 1)
            self._stages.append((f"up{level}", [
                _Conv(f"up{level}.conv", cin, cout, 1, 1, rng, dtype),
                _Norm(f"up{level}.norm", cout, cfg.norm_eps, dtype),
            ]))
            merged = 2 * cout if cfg.skip else cout
            self._stages.append((f"dec{level - 1}", block(f"dec{level - 1}", merged, cout)))
        self._head = _Conv("head", cfg.channels(0), cfg.out_channels, 1, 1, rng, dtype)
        self._stages.append(("head", [self._head]))

    # -- parameters -------------------------------------------------------

    def layers(self):
        for _, stage in self._stages:
            yield from stage

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers() for p in layer.params()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def zero_final_layer(self) -> None:
        """Zero the output conv so the network emits sigmoid(0) = 0.5 everywhere."""
        self._head.weight.data[...] = 0
        self._head.bias.data[...] = 0

    # -- forward ----------------------------------------------------------

    def check_input_shape(self, shape) -> None:
        if len(shape) != 5:
            raise ShapeError(f"U-Net input must be 5-D (N, C, D, H, W), got {tuple(shape)}")
        if shape[1] != self.config.in_channels:
            raise ShapeError(f"U-Net expects {self.config.in_channels} input channel(s), got {shape[1]}")
        k = self.config.divisor
        bad = [s for s in shape[2:] if s % k]
        if bad:
            raise ShapeError(
                f"spatial extents {tuple(shape[2:])} must be divisible by 2**depth = {k}"
            )

    def _act(self, x):
        return elementwise("leaky_relu", x, slope=self.config.slope)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input_shape(x.shape)
        skips = []
        h = x
        for name, stage in self._stages:
            if name == "head":
                return elementwise("sigmoid", stage[0](h))
            if name.startswith("down"):
                skips.append(h)
            elif name.startswith("up"):
                h = upsample_trilinear(h, 2)
            for layer in stage:
                h = layer(h)
                if isinstance(layer, _Norm):
                    h = self._act(h)
            if name.startswith("up") and self.config.skip:
                h = concat([skips.pop(), h], axis=1)
            elif name.startswith("up"):
                skips.pop()
        raise AssertionError("unreachable: network has no head")

    __call__ = forward

    # -- reporting --------------------------------------------------------

    def layer_table(self, input_shape=(32, 32, 32)) -> str:
        """Plain-text layer listing with output shapes and parameter counts."""
        d, h, w = input_shape
        rows = [f"{'layer':<14}{'kind':<10}{'in':>5}{'out':>5}{'k':>3}{'s':>3}  {'output':<22}{'params':>8}"]
        ch = self.config.in_channels
        spatial = (d, h, w)
        for name, stage in self._stages:
            if name.startswith("up"):
                spatial = tuple(s * 2 for s in spatial)
            for layer in stage:
                if isinstance(layer, _Conv):
                    if layer.stride > 1:
                        spatial = tuple((s + 2 * layer.padding - layer.kernel) // layer.stride + 1 for s in spatial)
                    ch = layer.cout
                    kind, cin, cout, k, s = "conv3d", layer.cin, layer.cout, layer.kernel, layer.stride
                else:
                    kind, cin, cout, k, s = "instnorm", layer.channels, layer.channels, 0, 0
                n = sum(p.size for p in layer.params())
                shape = str((ch,) + spatial).replace(" ", "")
                rows.append(f"{layer.name:<14}{kind:<10}{cin:>5}{cout:>5}{k:>3}{s:>3}  {shape:<22}{n:>8}")
            if name.startswith("up") and self.config.skip:
                ch *= 2
        rows.append(f"total parameters: {self.num_parameters()}")
        return "\n".join(rows)


def build_unet(config: UNetConfig | None = None, seed: int = 0) -> UNet:
    """Build a U-Net with fan-in scaled uniform initialization from ``seed``."""
    return UNet(config or UNetConfig(), seed)

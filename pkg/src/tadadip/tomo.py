"""Parallel-beam CT: forward projector, its exact adjoint, and FBP.

The 3D problem separates into identical 2D Radon transforms per axial slice,
so a single sparse system matrix (views * bins, N * N) serves every slice.
Rays are sampled at unit steps with bilinear interpolation; the backprojector
is the transpose of that same matrix.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import ShapeError, Tensor, _record

__all__ = [
    "Geometry",
    "forward_project",
    "back_project",
    "fbp",
    "pixel_backproject",
    "ramp_filter",
    "ProjectorOp",
    "projector_autodiff_op",
    "simulate_measurements",
]


def _default_num_det(image_size: int) -> int:
    n = math.ceil(image_size * math.sqrt(2))
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam acquisition of an (num_slices, image_size, image_size) volume.

    ``angles`` default to ``num_views`` uniform angles over [0, pi). ``num_det``
    defaults to the smallest odd count covering the slice diagonal.
    """

    image_size: int
    num_views: int
    num_slices: int
    num_det: int | None = None
    det_spacing: float = 1.0
    angles: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.image_size < 1 or self.num_slices < 1:
            raise ValueError("image_size and num_slices must be >= 1")
        if self.num_views < 1:
            raise ValueError(f"num_views must be >= 1, got {self.num_views}")
        if self.det_spacing <= 0:
            raise ValueError("det_spacing must be positive")
        if self.num_det is None:
            object.__setattr__(self, "num_det", _default_num_det(self.image_size))
        if self.num_det * self.det_spacing < self.image_size * math.sqrt(2) - 1e-9:
            raise ValueError(
                f"detector of {self.num_det} bins x {self.det_spacing} does not cover the "
                f"slice diagonal {self.image_size * math.sqrt(2):.2f}"
            )
        if self.angles is None:
            angles = np.arange(self.num_views) * (np.pi / self.num_views)
        else:
            angles = np.asarray(self.angles, dtype=np.float64)
        if angles.shape != (self.num_views,):
            raise ValueError(f"expected {self.num_views} angles, got {angles.size}")
        if np.any(np.diff(angles) <= 0) or angles[0] < 0 or angles[-1] >= np.pi:
            raise ValueError("angles must be strictly increasing within [0, pi)")
        object.__setattr__(self, "angles", tuple(float(a) for a in angles))

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        return (self.num_slices, self.image_size, self.image_size)

    @property
    def sinogram_shape(self) -> tuple[int, int, int]:
        return (self.num_slices, self.num_views, self.num_det)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_views": self.num_views,
            "num_slices": self.num_slices,
            "num_det": self.num_det,
            "det_spacing": self.det_spacing,
            "angles": list(self.angles),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        angles = d.get("angles")
        return cls(
            image_size=int(d["image_size"]),
            num_views=int(d["num_views"]),
            num_slices=int(d["num_slices"]),
            num_det=None if d.get("num_det") is None else int(d["num_det"]),
            det_spacing=float(d.get("det_spacing", 1.0)),
            angles=None if angles is None else tuple(float(a) for a in angles),
        )

    def fov_mask(self) -> np.ndarray:
        """Boolean (N, N) mask of pixels whose centre lies in the inscribed circle."""
        c = np.arange(self.image_size) - (self.image_size - 1) / 2.0
        return c[:, None] ** 2 + c[None, :] ** 2 <= (self.image_size / 2.0) ** 2

    def matrix(self, dtype=np.float32) -> sp.csr_matrix:
        """Per-slice system matrix, rows ordered (view, bin), columns (y, x)."""
        return _matrices(self, np.dtype(dtype).str)[0]

    def matrix_t(self, dtype=np.float32) -> sp.csr_matrix:
        return _matrices(self, np.dtype(dtype).str)[1]


@functools.lru_cache(maxsize=16)
def _system_matrix(g: Geometry) -> sp.csr_matrix:
    n = g.image_size
    radius = n / 2.0
    centre = (n - 1) / 2.0
    bins = (np.arange(g.num_det) - (g.num_det - 1) / 2.0) * g.det_spacing
    half = int(math.ceil(radius))
    steps = np.arange(-half, half + 1, dtype=np.float64)
    theta = np.asarray(g.angles)
    cos, sin = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    s = bins[None, :, None]
    t = steps[None, None, :]
    px = s * cos - t * sin
    py = s * sin + t * cos
    ray = np.broadcast_to(
        (np.arange(g.num_views)[:, None, None] * g.num_det + np.arange(g.num_det)[None, :, None]),
        px.shape,
    )
    inside = px * px + py * py <= radius * radius
    px, py, ray = px[inside], py[inside], ray[inside]
    cx, cy = px + centre, py + centre
    x0, y0 = np.floor(cx).astype(np.int64), np.floor(cy).astype(np.int64)
    fx, fy = cx - x0, cy - y0
    rows, cols, vals = [], [], []
    for dx, dy, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < n) & (yi >= 0) & (yi < n) & (w > 0)
        rows.append(ray[ok])
        cols.append(yi[ok] * n + xi[ok])
        vals.append(w[ok])
    # unit step length, so each sample contributes its interpolation weight
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.num_views * g.num_det, n * n),
    ).tocsr()
    mat.sum_duplicates()
    return mat


@functools.lru_cache(maxsize=32)
def _matrices(g: Geometry, dtype_str: str):
    base = _system_matrix(g)
    mat = base.astype(np.dtype(dtype_str))
    return mat, mat.T.tocsr()


def _check_volume(x: np.ndarray, g: Geometry) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != g.volume_shape:
        raise ShapeError(f"volume shape {x.shape} does not match geometry {g.volume_shape}")
    return x


def _check_sinogram(y: np.ndarray, g: Geometry) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != g.sinogram_shape:
        raise ShapeError(f"sinogram shape {y.shape} does not match geometry {g.sinogram_shape}")
    return y


def _float_dtype(arr: np.ndarray) -> np.dtype:
    return arr.dtype if arr.dtype in (np.float32, np.float64) else np.dtype(np.float64)


def forward_project(x, g: Geometry) -> np.ndarray:
    """Line integrals of every slice of ``x``; returns (slices, views, bins)."""
    x = _check_volume(x, g)
    dtype = _float_dtype(x)
    flat = x.reshape(g.num_slices, -1).astype(dtype, copy=False)
    out = g.matrix(dtype) @ flat.T
    return np.ascontiguousarray(out.T).reshape(g.sinogram_shape)


def back_project(y, g: Geometry) -> np.ndarray:
    """Exact adjoint of :func:`forward_project`."""
    y = _check_sinogram(y, g)
    dtype = _float_dtype(y)
    flat = y.reshape(g.num_slices, -1).astype(dtype, copy=False)
    out = g.matrix_t(dtype) @ flat.T
    return np.ascontiguousarray(out.T).reshape(g.volume_shape)


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def ramp_filter(num_det: int, det_spacing: float = 1.0, window: str = "ramlak") -> np.ndarray:
    """Real frequency response (rfft layout) of the band-limited ramp filter.

    The ramp is built from its sampled spatial kernel, which avoids the DC
    offset of a plain ``|f|`` response; the padded length is the next power of
    two at least twice the detector count.
    """
    size = max(64, _next_pow2(2 * num_det))
    n = np.concatenate((np.arange(0, size // 2 + 1), np.arange(size // 2 - 1, 0, -1)))
    kernel = np.zeros(size)
    kernel[0] = 0.25
    odd = n % 2 == 1
    kernel[odd] = -1.0 / (np.pi * n[odd]) ** 2
    response = np.fft.rfft(kernel).real / det_spacing
    if window == "hann":
        freq = np.fft.rfftfreq(size)
        response *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    elif window != "ramlak":
        raise ValueError(f"unknown filter {window!r}; expected 'ramlak' or 'hann'")
    return response


def pixel_backproject(q, g: Geometry) -> np.ndarray:
    """Pixel-driven backprojection with linear interpolation along the detector.

    Sums each view's profile evaluated at every pixel's detector coordinate;
    pixels outside the inscribed field of view are left at zero.
    """
    q = _check_sinogram(q, g)
    n = g.image_size
    coords = np.arange(n) - (n - 1) / 2.0
    py, px = np.meshgrid(coords, coords, indexing="ij")
    fov = g.fov_mask().ravel()
    px, py = px.ravel()[fov], py.ravel()[fov]
    out = np.zeros((g.num_slices, fov.sum()), dtype=np.float64)
    last = g.num_det - 1
    for v, theta in enumerate(g.angles):
        pos = (px * np.cos(theta) + py * np.sin(theta)) / g.det_spacing + last / 2.0
        lo = np.clip(np.floor(pos).astype(np.int64), 0, last - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        profile = q[:, v, :]
        out += profile[:, lo] * (1.0 - frac) + profile[:, lo + 1] * frac
    vol = np.zeros((g.num_slices, n * n), dtype=np.float64)
    vol[:, fov] = out
    return vol.reshape(g.volume_shape)


def fbp(y, g: Geometry, filter: str = "ramlak") -> np.ndarray:
    """Filtered backprojection of a parallel-beam sinogram."""
    if g.num_views == 0:
        raise ValueError("fbp needs at least one view")
    y = _check_sinogram(y, g)
    dtype = _float_dtype(y)
    response = ramp_filter(g.num_det, g.det_spacing, filter)
    size = 2 * (response.size - 1)
    spectrum = np.fft.rfft(y.astype(np.float64), n=size, axis=-1)
    filtered = np.fft.irfft(spectrum * response, n=size, axis=-1)[..., : g.num_det]
    vol = pixel_backproject(filtered, g) * (np.pi / g.num_views)
    return vol.astype(dtype, copy=False)


class ProjectorOp:
    """Forward projection as a differentiable operation.

    Accepts a tensor of shape (slices, N, N) or (1, 1, slices, N, N) and
    returns a (slices, views, bins) tensor; the backward rule applies the
    adjoint to the upstream gradient.
    """

    def __init__(self, geometry: Geometry):
        self.geometry = geometry

    def __call__(self, x: Tensor) -> Tensor:
        g = self.geometry
        in_shape = x.shape
        if in_shape[-3:] != g.volume_shape or int(np.prod(in_shape[:-3], dtype=np.int64)) != 1:
            raise ShapeError(f"projector input {in_shape} does not match geometry {g.volume_shape}")
        vol = x.data.reshape(g.volume_shape)
        out = forward_project(vol, g)

        def back(grad):
            return (back_project(grad, g).reshape(in_shape),)

        return _record("project", out, (x,), back)


def projector_autodiff_op(g: Geometry) -> ProjectorOp:
    return ProjectorOp(g)


def simulate_measurements(x, g: Geometry, noise_std: float = 0.0, seed: int | None = None) -> np.ndarray:
    """y = A x + n with n ~ N(0, noise_std^2 I)."""
    y = forward_project(x, g)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise_std, size=y.shape).astype(y.dtype)
    return y

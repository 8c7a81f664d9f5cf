"""Synthetic test volumes."""

from __future__ import annotations

import numpy as np

__all__ = ["SHEPP_LOGAN_3D", "ellipsoid_volume", "shepp_logan_3d", "disk_phantom"]

# (value, semi-axes a b c, centre x0 y0 z0, Euler angles phi theta psi in degrees).
# Ellipsoid geometry of the 3D Kak-Slaney phantom with the high-contrast
# gray levels, so that the summed intensities already span [0, 1].
SHEPP_LOGAN_3D = (
    (1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0, 0, 0),
    (-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0, 0, 0),
    (-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18, 0, 10),
    (-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18, 0, 10),
    (0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0, 0, 0),
    (0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0, 0, 0),
    (0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0, 0, 0),
    (0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0, 0, 0),
    (0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0, 0, 0),
    (0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0, 0, 0),
)


def euler_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    """z-x-z rotation matrix for angles in degrees."""
    phi, theta, psi = np.radians([phi, theta, psi])
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        [cp * cf - ct * sf * sp, cp * sf + ct * cf * sp, sp * st],
        [-sp * cf - ct * sf * cp, -sp * sf + ct * cf * cp, cp * st],
        [st * sf, -st * cf, ct],
    ])


def _grid(size: int):
    c = (2.0 * np.arange(size) + 1.0) / size - 1.0
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    return x, y, z


def ellipsoid_volume(ellipsoids, size: int) -> np.ndarray:
    """Sum of constant-valued ellipsoids on a size^3 grid spanning [-1, 1]^3.

    Volume axes are ordered (z, y, x).
    """
    x, y, z = _grid(size)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()])
    out = np.zeros(size ** 3)
    for value, a, b, c, x0, y0, z0, phi, theta, psi in ellipsoids:
        rot = euler_rotation(phi, theta, psi)
        q = rot @ (pts - np.array([[x0], [y0], [z0]]))
        inside = (q[0] / a) ** 2 + (q[1] / b) ** 2 + (q[2] / c) ** 2 <= 1.0
        out[inside] += value
    return out.reshape(size, size, size)


def shepp_logan_3d(size: int) -> np.ndarray:
    """Ten-ellipsoid 3D Shepp-Logan phantom clamped to [0, 1], as float32."""
    if size < 8:
        raise ValueError(f"phantom size must be >= 8, got {size}")
    vol = ellipsoid_volume(SHEPP_LOGAN_3D, size)
    # sums such as 1 - 0.8 - 0.2 leave ~1e-17 residue
    vol[np.abs(vol) < 1e-9] = 0.0
    return np.clip(vol, 0.0, 1.0).astype(np.float32)


def disk_phantom(size: int, radius: float, num_slices: int = 1, supersample: int = 8) -> np.ndarray:
    """Centred disk of value 1, area-weighted at its rim, repeated over slices."""
    sub = (np.arange(size * supersample) + 0.5) / supersample - size / 2.0
    yy, xx = np.meshgrid(sub, sub, indexing="ij")
    fine = (xx * xx + yy * yy <= radius * radius).astype(np.float64)
    img = fine.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return np.repeat(img[None].astype(np.float32), num_slices, axis=0)

"""Reference implementations used only to produce frozen oracle values.

They are written independently of the package code paths they check:
plain loops and ``np.interp`` instead of sparse matrices and FFTs.
"""

import numpy as np


def ramp_kernel(num_taps):
    """Kak-Slaney band-limited ramp kernel h[n] for unit detector spacing."""
    n = np.arange(-num_taps, num_taps + 1)
    h = np.zeros(n.size)
    h[n == 0] = 0.25
    odd = n % 2 != 0
    h[odd] = -1.0 / (np.pi * n[odd]) ** 2
    return h


def reference_fbp(sino, angles, size):
    """Spatial-domain filtering then pixel-driven backprojection with np.interp.

    ``sino`` is (slices, views, bins) with centred detector bins of unit width.
    Pixel centres sit at (size - 1) / 2; pixels outside the inscribed circle are 0.
    """
    slices, views, bins = sino.shape
    h = ramp_kernel(bins)
    det = np.arange(bins) - (bins - 1) / 2
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size] - c
    inside = xx ** 2 + yy ** 2 <= (size / 2) ** 2
    out = np.zeros((slices, size, size))
    for z in range(slices):
        for v, theta in enumerate(angles):
            filtered = np.convolve(sino[z, v], h, mode="full")[bins:2 * bins]
            s = xx * np.cos(theta) + yy * np.sin(theta)
            out[z] += np.interp(s, det, filtered, left=0.0, right=0.0)
    out *= np.pi / views
    out[:, ~inside] = 0
    return out


def ray_marched_sinogram(density, size, slices, angles, bins, step=0.125):
    """Line integrals of a continuous density by fine ray marching.

    ``density(x, y, z)`` takes arrays in voxel units centred on the volume
    (z in slice-index units); integration stops at the inscribed circle.
    """
    det = np.arange(bins) - (bins - 1) / 2
    r = size / 2
    t = np.arange(-r + step / 2, r, step)
    sino = np.zeros((slices, len(angles), bins))
    for zi in range(slices):
        zc = zi - (slices - 1) / 2
        for v, theta in enumerate(angles):
            px = det[:, None] * np.cos(theta) - t[None, :] * np.sin(theta)
            py = det[:, None] * np.sin(theta) + t[None, :] * np.cos(theta)
            vals = density(px, py, np.full_like(px, zc))
            vals[px ** 2 + py ** 2 > r * r] = 0
            sino[zi, v] = vals.sum(axis=1) * step
    return sino


def shepp_logan_nonzero_count(ellipsoids, size):
    """Count voxels with positive clamped intensity by plain point-in-ellipsoid tests.

    Intensities are accumulated as integer tenths so sums like 1 - 0.8 - 0.2
    are exactly zero. Rotations use the z-x-z Euler convention written out
    longhand.
    """
    import math

    prepared = []
    for value, a, b, c, x0, y0, z0, phi, theta, psi in ellipsoids:
        f, t, p = math.radians(phi), math.radians(theta), math.radians(psi)
        cf, sf, ct, st, cp, sp = math.cos(f), math.sin(f), math.cos(t), math.sin(t), math.cos(p), math.sin(p)
        rows = (
            (cp * cf - ct * sf * sp, cp * sf + ct * cf * sp, sp * st),
            (-sp * cf - ct * sf * cp, -sp * sf + ct * cf * cp, cp * st),
            (st * sf, -st * cf, ct),
        )
        prepared.append((round(value * 10), (a, b, c), (x0, y0, z0), rows))
    coords = [(2 * i + 1) / size - 1 for i in range(size)]
    count = 0
    for z in coords:
        for y in coords:
            for x in coords:
                total = 0
                for tenths, axes, centre, rows in prepared:
                    d = (x - centre[0], y - centre[1], z - centre[2])
                    acc = 0.0
                    for row, ax in zip(rows, axes):
                        q = row[0] * d[0] + row[1] * d[1] + row[2] * d[2]
                        acc += (q / ax) ** 2
                    if acc <= 1.0:
                        total += tenths
                if total > 0:
                    count += 1
    return count

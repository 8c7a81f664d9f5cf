import numpy as np
import pytest

from tadadip.autodiff import Tensor, backward, precision
from tadadip.tomo import Geometry


def fd_check(build_loss, arrays, rng, coords=10, h=1e-4):
    """Compare analytic and central-difference gradients at random coordinates.

    ``build_loss`` maps a list of float64 Tensors to a scalar Tensor.
    Returns the worst relative error over all checked coordinates.
    """
    with precision(np.float64):
        leaves = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
        backward(build_loss(leaves))
        worst = 0.0
        for leaf in leaves:
            flat = leaf.data.reshape(-1)
            grad = leaf.grad.reshape(-1)
            for idx in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                up = build_loss(leaves).item()
                flat[idx] = orig - h
                down = build_loss(leaves).item()
                flat[idx] = orig
                numeric = (up - down) / (2 * h)
                denom = max(abs(numeric), abs(grad[idx]), 1e-6)
                worst = max(worst, abs(numeric - grad[idx]) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    return Geometry(image_size=16, num_views=12, num_slices=4)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, passed, detail):
    """Remember a one-line verdict for the end-of-session acceptance summary."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

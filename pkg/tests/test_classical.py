import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tadadip.classical import (
    TV_EPS,
    AsdPocsConfig,
    asd_pocs,
    sart,
    total_variation,
    tv_descent_step,
    tv_gradient,
)
from tadadip.autodiff import ShapeError
from tadadip.toolkit.metrics import psnr
from tadadip.toolkit.phantoms import shepp_logan_3d
from tadadip.tomo import Geometry, fbp, forward_project

volumes = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(2, 5)),
                 elements=st.floats(-10, 10))


class TestTotalVariation:
    def test_constant_volume(self):
        x = np.full((4, 5, 6), 3.0)
        assert total_variation(x) <= TV_EPS * x.size * (1 + 1e-9)

    def test_single_difference(self):
        assert total_variation(np.array([[[0.0, 1.0]]])) == pytest.approx(1.0, abs=1e-7)

    def test_hand_computed_isotropic_value(self):
        # one voxel with unit steps in two directions contributes sqrt(2)
        x = np.zeros((1, 2, 2))
        x[0, 0, 0] = 1.0
        # voxel (0,0): dy=-1, dx=-1; voxel (0,1): dy=0 (boundary), dx=0; voxel (1,0): dx=0
        assert total_variation(x) == pytest.approx(np.sqrt(2.0), abs=1e-7)

    @settings(max_examples=50, deadline=None)
    @given(volumes, st.floats(0.1, 10))
    def test_positive_homogeneity(self, x, a):
        assert total_variation(a * x) == pytest.approx(a * total_variation(x), rel=1e-6, abs=1e-6 * x.size)

    @settings(max_examples=50, deadline=None)
    @given(volumes)
    def test_nonnegative_and_shift_invariant(self, x):
        tv = total_variation(x)
        assert tv >= 0
        assert total_variation(x + 5.0) == pytest.approx(tv, rel=1e-9, abs=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((4, 5, 6))
        grad = tv_gradient(x)
        h = 1e-6
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up, down = x.copy(), x.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (total_variation(up) - total_variation(down)) / (2 * h)
        cosine = np.vdot(grad, numeric) / (np.linalg.norm(grad) * np.linalg.norm(numeric))
        assert cosine > 0.999
        np.testing.assert_allclose(grad, numeric, atol=1e-5)


class TestDescentStep:
    def test_constant_unchanged(self):
        x = np.full((3, 3, 3), 2.0)
        assert np.array_equal(tv_descent_step(x, 0.5), x)

    def test_step_edge_tv_decreases(self):
        x = np.zeros((8, 8, 8))
        x[:, :, 4:] = 1.0
        assert total_variation(tv_descent_step(x, 0.01)) < total_variation(x)

    def test_unit_direction(self, rng):
        x = rng.standard_normal((4, 4, 4))
        assert np.linalg.norm(tv_descent_step(x, 0.3) - x) == pytest.approx(0.3)

    @pytest.mark.parametrize("step", [0.0, -1.0])
    def test_nonpositive_step_rejected(self, step):
        with pytest.raises(ValueError):
            tv_descent_step(np.zeros((2, 2, 2)), step)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(iterations=0), dict(num_subsets=0), dict(tv_steps_per_iter=-1),
                                        dict(relaxation=0.0), dict(relaxation=2.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AsdPocsConfig(**kwargs)

    def test_defaults(self):
        cfg = AsdPocsConfig()
        assert (cfg.iterations, cfg.num_subsets, cfg.tv_steps_per_iter) == (500, 30, 50)
        assert cfg.relaxation == 1.0 and cfg.relaxation_decay == 0.995 and cfg.tv_step_fraction == 0.2


@pytest.fixture(scope="module")
def problem():
    x = shepp_logan_3d(24)
    g = Geometry(24, 20, 24)
    return x, g, forward_project(x, g)


class TestAsdPocs:
    def test_zero_measurements_fixed_point(self):
        g = Geometry(12, 6, 3)
        res = asd_pocs(np.zeros(g.sinogram_shape), g, AsdPocsConfig(iterations=3, num_subsets=3, tv_steps_per_iter=5))
        assert not res.volume.any()

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            asd_pocs(np.zeros((3, 6, 5)), Geometry(12, 6, 3))

    def test_nonnegative_every_iteration(self, problem):
        x, g, y = problem
        seen = []
        asd_pocs(y, g, AsdPocsConfig(iterations=8, num_subsets=5, tv_steps_per_iter=10),
                 callback=lambda k, vol: seen.append(vol.min()))
        assert len(seen) == 8 and min(seen) >= 0

    def test_reduces_to_sart_without_tv_steps(self, problem):
        _, g, y = problem
        res = asd_pocs(y, g, AsdPocsConfig(iterations=6, num_subsets=5, tv_steps_per_iter=0))
        assert np.array_equal(res.volume, sart(y, g, 6, num_subsets=5))

    def test_data_phase_residual_monotone(self, problem):
        _, g, y = problem
        res = asd_pocs(y, g, AsdPocsConfig(iterations=50, num_subsets=10, tv_steps_per_iter=20))
        r = np.array(res.data_phase_residual)
        assert np.all(r[1:] <= r[:-1] * 1.01)
        assert r[-1] < 0.75 * r[0]

    def test_trace_rows(self, problem):
        _, g, y = problem
        res = asd_pocs(y, g, AsdPocsConfig(iterations=3, num_subsets=5, tv_steps_per_iter=2))
        rows = list(res.trace_rows())
        assert [r["iteration"] for r in rows] == [1, 2, 3]
        assert set(rows[0]) == {"iteration", "data_residual", "tv_value"}

    def test_beats_fbp_on_small_phantom(self, problem):
        x, g, y = problem
        rec = asd_pocs(y, g, AsdPocsConfig(iterations=150, num_subsets=20)).volume
        assert psnr(rec, x) >= psnr(fbp(y, g), x) + 2.0

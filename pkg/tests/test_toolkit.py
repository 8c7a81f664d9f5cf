import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import shepp_logan_nonzero_count
from tadadip.toolkit.io import FormatError, VolumeHeader, header_path, load_volume, save_volume
from tadadip.toolkit.metrics import MetricReport, evaluate, psnr, ssim, ssim3d
from tadadip.toolkit.phantoms import SHEPP_LOGAN_3D, disk_phantom, ellipsoid_volume, shepp_logan_3d
from tadadip.toolkit.preprocessing import normalize_volume, resize_trilinear
from tadadip.toolkit.visualize import mip, save_pgm

# brute-force count (tests/oracles.py) of voxels with positive intensity at size 64
SHEPP_LOGAN_64_NONZERO = 67030
# skimage structural_similarity (gaussian_weights, sigma 1.5, population covariance),
# averaged over the 32 slices of the seeded noisy pair below
NOISY_PAIR_SSIM = 0.6802497844828399


def noisy_pair():
    ref = shepp_logan_3d(32).astype(np.float64)
    return ref + np.random.default_rng(2024).normal(0, 0.05, ref.shape), ref


class TestPhantoms:
    def test_range_and_levels(self):
        vol = shepp_logan_3d(32)
        assert vol.dtype == np.float32 and vol.shape == (32, 32, 32)
        assert vol.min() == 0 and vol.max() == 1
        assert set(np.unique(vol)) <= {0.0, np.float32(0.2), np.float32(0.3), 1.0}

    def test_small_size_rejected(self):
        with pytest.raises(ValueError):
            shepp_logan_3d(7)

    def test_nonzero_count_matches_frozen_oracle(self):
        assert np.count_nonzero(shepp_logan_3d(64)) == SHEPP_LOGAN_64_NONZERO

    def test_nonzero_count_matches_live_oracle(self):
        assert np.count_nonzero(shepp_logan_3d(16)) == shepp_logan_nonzero_count(SHEPP_LOGAN_3D, 16)

    def test_symmetric_ellipsoids_give_mirror_symmetric_volume(self):
        # the skull and brain ellipsoids are centred on x = 0; the full phantom is
        # not mirror symmetric because the two lateral ellipsoids differ in size
        shell = ellipsoid_volume(SHEPP_LOGAN_3D[:2], 40)
        assert np.array_equal(shell, shell[:, :, ::-1])
        full = shepp_logan_3d(40)
        assert not np.array_equal(full, full[:, :, ::-1])

    def test_single_sphere_volume_fraction(self):
        vol = ellipsoid_volume([(1.0, 0.5, 0.5, 0.5, 0, 0, 0, 0, 0, 0)], 64)
        assert vol.mean() == pytest.approx(np.pi / 6 * 0.125, rel=0.02)

    def test_disk_area(self):
        img = disk_phantom(64, 10.0)[0]
        assert img.sum() == pytest.approx(np.pi * 100, rel=1e-3)
        assert np.array_equal(img, img[::-1]) and np.array_equal(img, img.T)


class TestPreprocessing:
    def test_normalize_range_and_idempotence(self, rng):
        x = rng.standard_normal((4, 5, 6)) * 3 + 1
        n = normalize_volume(x)
        assert n.min() == 0 and n.max() == 1
        assert np.array_equal(normalize_volume(n), n)

    def test_normalize_constant(self):
        assert not normalize_volume(np.full((2, 2, 2), 4.0)).any()

    def test_resize_identity_and_constant(self, rng):
        x = rng.standard_normal((3, 4, 5))
        assert np.array_equal(resize_trilinear(x, x.shape), x)
        np.testing.assert_allclose(resize_trilinear(np.full((3, 4, 5), 2.5), (7, 2, 9)), 2.5, rtol=1e-14)

    def test_resize_ramp_follows_analytic_samples(self):
        n = 8
        ramp = np.broadcast_to(0.3 + 0.7 * np.arange(n), (2, 3, n)).copy()
        out = resize_trilinear(ramp, (2, 3, 2 * n))
        src = np.clip((np.arange(2 * n) + 0.5) / 2 - 0.5, 0, n - 1)
        np.testing.assert_allclose(out[0, 0], 0.3 + 0.7 * src, atol=1e-5)
        # interior samples are evenly spaced
        np.testing.assert_allclose(np.diff(out[0, 0, 1:-1]), 0.35, atol=1e-5)

    def test_resize_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            resize_trilinear(np.zeros((2, 2, 2)), (2, 0, 2))
        with pytest.raises(ValueError):
            resize_trilinear(np.zeros((2, 2, 2)), (2, 2))


class TestMetrics:
    def test_psnr_offset_is_20db(self, rng):
        ref = rng.uniform(size=(4, 16, 16))
        assert psnr(ref + 0.1, ref, 1.0) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_identity_and_symmetry(self, rng):
        a, b = rng.uniform(size=(2, 3, 12, 12))
        assert psnr(a, a) == float("inf")
        assert psnr(a, b) == psnr(b, a)
        with pytest.raises(ValueError):
            psnr(a, b[:, :-1])
        with pytest.raises(ValueError):
            psnr(a, b, data_range=0)

    def test_ssim_identity_exact(self, rng):
        a = rng.uniform(size=(3, 16, 16))
        assert ssim(a, a) == 1.0
        assert ssim3d(np.repeat(a, 4, axis=0), np.repeat(a, 4, axis=0)) == 1.0

    def test_ssim_matches_frozen_reference(self):
        assert abs(ssim(*noisy_pair()) - NOISY_PAIR_SSIM) < 1e-3

    def test_ssim_matches_skimage_live(self):
        skm = pytest.importorskip("skimage.metrics")
        x, ref = noisy_pair()
        expected = np.mean([skm.structural_similarity(x[z], ref[z], data_range=1.0, gaussian_weights=True,
                                                      sigma=1.5, use_sample_covariance=False)
                            for z in range(x.shape[0])])
        assert ssim(x, ref) == pytest.approx(expected, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.001, 2.0))
    def test_ssim_bounded(self, seed, noise):
        r = np.random.default_rng(seed)
        a = r.uniform(size=(2, 12, 12))
        b = a + r.normal(0, noise, a.shape)
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_ssim_rejects_small_slices(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((2, 10, 12)), np.zeros((2, 10, 12)))

    def test_report(self, rng):
        a = rng.uniform(size=(2, 12, 12))
        rep = evaluate(a, a)
        assert rep.psnr == float("inf") and rep.ssim == 1.0 and rep.data_range == 1.0
        with pytest.raises(ValueError):
            MetricReport(10.0, 1.5, 1.0)


class TestFormat:
    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
    def test_roundtrip_bitwise(self, tmp_path_factory, x):
        path = tmp_path_factory.mktemp("vol") / "x.vol"
        save_volume(path, x)
        back = load_volume(path)
        assert back.dtype == np.float32 and back.tobytes() == x.tobytes()

    def test_payload_layout(self, tmp_path):
        path = tmp_path / "v.vol"
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        header = save_volume(path, x, description="ramp")
        assert header.nbytes == 96
        raw = path.read_bytes()
        assert len(raw) == 96 and np.frombuffer(raw, "<f4")[5] == 5.0
        meta = json.loads(header_path(path).read_text())
        assert meta == {"shape": [2, 3, 4], "dtype": "f32le", "layout": "c-order", "description": "ramp"}
        _, loaded = load_volume(path, with_header=True)
        assert loaded == header

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "v.vol"
        save_volume(path, np.zeros((2, 3, 4), np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="payload length"):
            load_volume(path)

    @pytest.mark.parametrize("mutation,field", [
        ({"dtype": "f64be"}, "dtype"),
        ({"layout": "fortran"}, "layout"),
        ({"shape": [2, 0, 4]}, "shape"),
        ({"shape": "2x3x4"}, "shape"),
        ({"extra": 1}, "unknown field"),
    ])
    def test_corrupt_header_names_field(self, tmp_path, mutation, field):
        path = tmp_path / "v.vol"
        save_volume(path, np.zeros((2, 3, 4), np.float32))
        meta = json.loads(header_path(path).read_text())
        meta.update(mutation)
        header_path(path).write_text(json.dumps(meta))
        with pytest.raises(FormatError, match=field):
            load_volume(path)

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "v.vol"
        save_volume(path, np.zeros((1, 1, 1), np.float32))
        header_path(path).write_text("{not json")
        with pytest.raises(FormatError, match="header"):
            load_volume(path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "nothing.vol")

    def test_header_validation(self):
        with pytest.raises(FormatError):
            VolumeHeader(())

    def test_no_temporary_files_left(self, tmp_path):
        save_volume(tmp_path / "a.vol", np.ones((2, 2, 2)))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.vol", "a.vol.json"]


class TestMip:
    def test_constant_above_threshold(self):
        np.testing.assert_array_equal(mip(np.full((3, 4, 5), 0.7), "y", 0.45), np.full((3, 5), 0.7))

    def test_full_threshold_zeroes(self, rng):
        assert not mip(rng.uniform(0, 0.99, size=(3, 4, 5)), "z", 1.0).any()

    @pytest.mark.parametrize("axis,shape", [("z", (4, 5)), ("y", (3, 5)), ("x", (3, 4))])
    def test_axes(self, axis, shape, rng):
        x = rng.uniform(size=(3, 4, 5))
        img = mip(x, axis, 0.3)
        assert img.shape == shape
        assert img.max() == x[x >= 0.3].max()

    def test_invalid(self):
        with pytest.raises(ValueError):
            mip(np.zeros((2, 2, 2)), "w")
        with pytest.raises(ValueError):
            mip(np.zeros((2, 2, 2)), "z", 1.5)

    def test_pgm_bytes(self, tmp_path):
        path = tmp_path / "m.pgm"
        save_pgm(path, np.array([[0.0, 0.5], [1.0, 2.0]]))
        assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 255])

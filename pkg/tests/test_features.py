"""Filter bank analytics, patch sampling, quantile equalization and volume I/O."""

import numpy as np
import pytest

from bagwise.bagcore import BagwiseError
from bagwise.features import (
    FILTER_NAMES,
    FilterBankConfig,
    Mask,
    Patch,
    QuantileEdges,
    Volume,
    extract_bag_features,
    extract_features,
    filter_bank,
    fit_quantile_edges,
    gaussian_derivatives,
    histogram_features,
    load_edges,
    load_mask,
    load_volume,
    patch_side_voxels,
    pool_patch_responses,
    sample_patches,
    save_edges,
    save_mask,
    save_volume,
)


def coords_mm(dims, spacing):
    """Physical coordinate grids (x, y, z) in mm."""
    axes = [np.arange(d) * s for d, s in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def interior(arr, margin):
    return arr[margin:-margin, margin:-margin, margin:-margin]


class TestGaussianDerivatives:
    def test_constant_volume(self):
        vol = Volume(np.full((20, 20, 20), 3.5), (1.0, 1.0, 1.0))
        blur = gaussian_derivatives(vol, 2.0, (0, 0, 0))
        np.testing.assert_allclose(blur, 3.5, rtol=1e-10)
        # truncated derivative kernels do not sum exactly to zero
        for order in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0)]:
            resp = gaussian_derivatives(vol, 2.0, order)
            np.testing.assert_allclose(resp, 0.0, atol=1e-3)

    def test_linear_ramp_gradient_physical_units(self):
        dims, spacing = (30, 24, 24), (0.5, 1.0, 2.0)
        x, y, z = coords_mm(dims, spacing)
        vol = Volume(2.0 * x, spacing)   # df/dx = 2 per mm
        gx = gaussian_derivatives(vol, 1.0, (1, 0, 0))
        assert np.allclose(interior(gx, 10), 2.0, rtol=1e-3)
        gy = gaussian_derivatives(vol, 1.0, (0, 1, 0))
        assert np.allclose(interior(gy, 10), 0.0, atol=1e-6)

    def test_quadratic_second_derivative(self):
        dims, spacing = (40, 20, 20), (0.5, 1.0, 1.0)
        x, y, z = coords_mm(dims, spacing)
        vol = Volume(x ** 2, spacing)    # d2f/dx2 = 2 per mm^2
        hxx = gaussian_derivatives(vol, 1.0, (2, 0, 0))
        assert np.allclose(interior(hxx, 12), 2.0, rtol=1e-3)

    def test_gaussian_blob_blur_closed_form(self):
        # blurring N(0, s0^2 I) with scale t gives amplitude (s0^2/(s0^2+t^2))^1.5
        dims, spacing, s0, t = (41, 41, 41), (1.0, 1.0, 1.0), 4.0, 2.0
        x, y, z = coords_mm(dims, spacing)
        c = 20.0
        r2 = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2
        vol = Volume(np.exp(-r2 / (2 * s0 ** 2)), spacing)
        blur = gaussian_derivatives(vol, t, (0, 0, 0))
        expected = (s0 ** 2 / (s0 ** 2 + t ** 2)) ** 1.5
        assert blur[20, 20, 20] == pytest.approx(expected, rel=1e-3)

    def test_invalid_scale(self):
        vol = Volume(np.zeros((5, 5, 5)), (1.0, 1.0, 1.0))
        with pytest.raises(BagwiseError):
            gaussian_derivatives(vol, 0.0, (0, 0, 0))


class TestFilterBank:
    def test_channel_layout(self):
        cfg = FilterBankConfig(scales=(1.0, 2.0, 4.0), bins=16)
        assert len(cfg.channel_names) == 24
        assert cfg.channel_names[0] == "blur@1mm"
        assert cfg.channel_names[8] == "blur@2mm"
        assert cfg.feature_dim == 24 * 16

    def test_log_is_eigenvalue_sum_and_frobenius_identity(self):
        rng = np.random.default_rng(0)
        vol = Volume(rng.standard_normal((16, 16, 16)), (1.0, 1.0, 1.0))
        cfg = FilterBankConfig(scales=(2.0,), bins=4)
        resp = filter_bank(vol, cfg)
        names = dict(zip(FILTER_NAMES, resp))
        eig_sum = names["eig1"] + names["eig2"] + names["eig3"]
        np.testing.assert_allclose(names["log"], eig_sum, atol=1e-12)
        frob_sq = names["eig1"] ** 2 + names["eig2"] ** 2 + names["eig3"] ** 2
        np.testing.assert_allclose(names["frobenius"] ** 2, frob_sq, atol=1e-10)

    def test_eigenvalues_sorted_descending(self):
        rng = np.random.default_rng(1)
        vol = Volume(rng.standard_normal((12, 12, 12)), (1.0, 1.0, 1.0))
        resp = filter_bank(vol, FilterBankConfig(scales=(1.5,), bins=4))
        names = dict(zip(FILTER_NAMES, resp))
        assert np.all(names["eig1"] >= names["eig2"])
        assert np.all(names["eig2"] >= names["eig3"])

    def test_gaussian_curvature_zero_gradient_convention(self):
        vol = Volume(np.full((12, 12, 12), 2.0), (1.0, 1.0, 1.0))
        resp = filter_bank(vol, FilterBankConfig(scales=(1.0,), bins=4))
        names = dict(zip(FILTER_NAMES, resp))
        np.testing.assert_array_equal(names["gauss_curv"], 0.0)

    def test_gaussian_curvature_sphere(self):
        # isophotes of a radial function are spheres: K = 1/r^2
        dims, spacing = (41, 41, 41), (1.0, 1.0, 1.0)
        x, y, z = coords_mm(dims, spacing)
        c = 20.0
        r2 = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2
        vol = Volume(np.exp(-r2 / (2 * 8.0 ** 2)), spacing)
        resp = filter_bank(vol, FilterBankConfig(scales=(1.0,), bins=4))
        K = dict(zip(FILTER_NAMES, resp))["gauss_curv"]
        r = 6.0
        # sample a voxel at distance ~6 from the center along an axis
        assert K[26, 20, 20] == pytest.approx(1.0 / r ** 2, rel=0.05)


class TestPatches:
    def test_side_voxels_nearest_odd(self):
        assert patch_side_voxels(11.0, (1.0, 2.0, 3.0)) == (11, 5, 3)
        assert patch_side_voxels(11.0, (0.7, 0.7, 0.7)) == (15, 15, 15)
        assert patch_side_voxels(1.0, (2.0, 2.0, 2.0)) == (1, 1, 1)

    def test_patches_inside_mask_and_volume(self):
        rng = np.random.default_rng(2)
        vol = Volume(rng.standard_normal((30, 30, 30)), (1.0, 1.0, 1.0))
        mask = np.zeros((30, 30, 30), dtype=bool)
        mask[8:22, 8:22, 8:22] = True
        patches = sample_patches(vol, Mask(mask), 50, 11.0, seed=3)
        assert len(patches) == 50
        for p in patches:
            assert mask[p.center]
            for sl, dim in zip(p.slices(), vol.dims):
                assert 0 <= sl.start and sl.stop <= dim
            assert p.side_vox == (11, 11, 11)

    def test_deterministic_and_overlapping_allowed(self):
        vol = Volume(np.zeros((20, 20, 20)), (1.0, 1.0, 1.0))
        mask = Mask(np.ones((20, 20, 20), dtype=bool))
        a = sample_patches(vol, mask, 30, 5.0, seed=4)
        b = sample_patches(vol, mask, 30, 5.0, seed=4)
        assert [p.center for p in a] == [p.center for p in b]

    def test_empty_admissible_region_rejected(self):
        vol = Volume(np.zeros((20, 20, 20)), (1.0, 1.0, 1.0))
        mask = np.zeros((20, 20, 20), dtype=bool)
        mask[0, 0, 0] = True   # too close to the boundary for an 11-voxel cube
        with pytest.raises(BagwiseError):
            sample_patches(vol, Mask(mask), 5, 11.0, seed=0)


class TestQuantileHistograms:
    def test_bin_semantics_left_open_right_closed(self):
        edges = np.array([1.0, 2.0, 3.0])
        vals = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5])
        h = histogram_features(vals, edges, 4)
        # bins: (-inf,1], (1,2], (2,3], (3,inf) -> counts 2,2,2,1
        np.testing.assert_allclose(h * len(vals), [2, 2, 2, 1])

    def test_histogram_l1_normalized(self):
        rng = np.random.default_rng(5)
        h = histogram_features(rng.standard_normal(500), np.array([-1.0, 0.0, 1.0]), 4)
        assert h.sum() == pytest.approx(1.0)

    def test_equalized_training_pool_is_flat(self):
        rng = np.random.default_rng(6)
        cfg = FilterBankConfig(scales=(1.0,), bins=16)
        samples = [rng.standard_normal(8000) * (c + 1) for c in range(8)]
        edges = fit_quantile_edges(samples, cfg)
        per_bin = 8000 / 16
        for c, s in enumerate(samples):
            h = histogram_features(s, edges.edges[c], 16) * len(s)
            assert np.all(np.abs(h - per_bin) <= 2 * np.sqrt(per_bin))

    def test_edges_are_quantiles(self):
        rng = np.random.default_rng(7)
        cfg = FilterBankConfig(scales=(1.0,), bins=4)
        samples = [rng.standard_normal(1000) for _ in range(8)]
        edges = fit_quantile_edges(samples, cfg)
        for c, s in enumerate(samples):
            np.testing.assert_allclose(
                edges.edges[c], np.quantile(s, [0.25, 0.5, 0.75]), atol=1e-12)

    def test_too_few_samples_rejected(self):
        cfg = FilterBankConfig(scales=(1.0,), bins=16)
        with pytest.raises(BagwiseError):
            fit_quantile_edges([np.arange(4.0)] * 8, cfg)


class TestEndToEnd:
    def test_extract_bag_features_shape_and_determinism(self):
        rng = np.random.default_rng(8)
        vol = Volume(rng.standard_normal((24, 24, 24)), (1.0, 1.0, 1.0))
        mask = Mask(np.ones((24, 24, 24), dtype=bool))
        cfg = FilterBankConfig(scales=(1.0, 2.0), bins=4)
        pooled = pool_patch_responses(vol, mask, cfg, 20, 7.0, seed=9)
        assert len(pooled) == 16
        edges = fit_quantile_edges(pooled, cfg)
        F1 = extract_bag_features(vol, mask, cfg, edges, 10, 7.0, seed=10)
        F2 = extract_bag_features(vol, mask, cfg, edges, 10, 7.0, seed=10)
        assert F1.shape == (10, 16 * 4)
        np.testing.assert_array_equal(F1, F2)
        np.testing.assert_allclose(F1.reshape(10, 16, 4).sum(axis=2), 1.0)


class TestVolumeIO:
    def test_volume_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        vol = Volume(rng.standard_normal((6, 5, 4)).astype(np.float32),
                     (0.5, 0.7, 2.0))
        path = tmp_path / "vol.json"
        save_volume(vol, path)
        back = load_volume(path)
        assert back.dims == (6, 5, 4)
        assert back.spacing == (0.5, 0.7, 2.0)
        np.testing.assert_allclose(back.voxels, vol.voxels, atol=1e-7)

    def test_payload_is_x_fastest(self, tmp_path):
        v = np.arange(24, dtype=np.float32).reshape(2, 3, 4)   # x, y, z
        path = tmp_path / "vol.json"
        save_volume(Volume(v, (1, 1, 1)), path)
        flat = np.fromfile(tmp_path / "vol.raw", dtype="<f4")
        # first two payload entries step along x
        assert flat[0] == v[0, 0, 0] and flat[1] == v[1, 0, 0]

    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        mask = Mask(rng.random((4, 5, 6)) > 0.5)
        path = tmp_path / "mask.json"
        save_mask(mask, path)
        np.testing.assert_array_equal(load_mask(path).voxels, mask.voxels)

    def test_size_mismatch_rejected(self, tmp_path):
        path = tmp_path / "vol.json"
        save_volume(Volume(np.zeros((3, 3, 3)), (1, 1, 1)), path)
        (tmp_path / "vol.raw").write_bytes(b"\0" * 8)
        with pytest.raises(BagwiseError):
            load_volume(path)

    def test_edges_round_trip(self, tmp_path):
        cfg = FilterBankConfig(scales=(1.0,), bins=4)
        rng = np.random.default_rng(13)
        edges = fit_quantile_edges([rng.standard_normal(100) for _ in range(8)], cfg)
        path = tmp_path / "edges.json"
        save_edges(edges, path)
        back = load_edges(path)
        assert back.channel_names == edges.channel_names
        assert back.bins == edges.bins
        np.testing.assert_array_equal(back.edges, edges.edges)

"""Radiation map, structure-only SSIM, depth uncertainty and the boltz loss."""

import numpy as np
import pytest

from thermosplat import autodiff as ad
from thermosplat.autodiff import ParamSet, finite_difference_check, tensor
from thermosplat.errors import DataError
from thermosplat.radiation import (KELVIN_OFFSET, STEFAN_BOLTZMANN,
                                   RadiationConfig, boltz_loss,
                                   depth_uncertainty, init_uncertainty_params,
                                   radiation_map, radiation_raw, s_ssim)

CFG = RadiationConfig(t_min=-20.0, t_max=120.0, window=11, depth_floor=1e-3)


class TestRadiationRaw:
    def test_zero_celsius_unit_depth(self):
        # Oracle: independent high-precision evaluation of tau * T^4 / D^2.
        t_norm = np.full((4, 4), (0.0 + 20.0) / 140.0)
        raw = radiation_raw(t_norm, np.ones((4, 4)), CFG)
        expected = STEFAN_BOLTZMANN * KELVIN_OFFSET**4
        np.testing.assert_allclose(raw, expected, rtol=1e-10)
        assert abs(expected - 315.66) < 0.01  # ~315.7 W/m^2

    def test_inverse_square_law_exact(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(0.2, 0.8, (6, 6))
        d = rng.uniform(0.5, 3.0, (6, 6))
        near = np.asarray(radiation_raw(t, d, CFG))
        far = np.asarray(radiation_raw(t, 2.0 * d, CFG))
        assert np.array_equal(far, near / 4.0)

    def test_depth_floor_guards_small_depths(self):
        t = np.full((2, 2), 0.5)
        raw_zero = np.asarray(radiation_raw(t, np.zeros((2, 2)), CFG))
        raw_floor = np.asarray(radiation_raw(t, np.full((2, 2), CFG.depth_floor), CFG))
        np.testing.assert_allclose(raw_zero, raw_floor)

    def test_nan_rejected_with_pixel(self):
        t = np.full((3, 3), 0.5)
        t[1, 2] = np.nan
        with pytest.raises(DataError, match=r"\(1, 2\)"):
            radiation_raw(t, np.ones((3, 3)), CFG)


class TestRadiationMap:
    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(1)
        e_r = radiation_map(rng.uniform(0, 1, (8, 8)), rng.uniform(0.5, 4, (8, 8)), CFG)
        assert np.asarray(e_r).min() == 0.0 and np.asarray(e_r).max() == 1.0

    def test_constant_field_normalizes_to_zero(self):
        e_r = radiation_map(np.full((5, 5), 0.3), np.full((5, 5), 2.0), CFG)
        np.testing.assert_array_equal(np.asarray(e_r), 0.0)

    def test_affine_invariance_of_normalization(self):
        # Scaling raw radiation (via tau) must not change the normalized map.
        rng = np.random.default_rng(2)
        t = rng.uniform(0.2, 0.8, (6, 6))
        d = rng.uniform(0.5, 2.0, (6, 6))
        scaled = RadiationConfig(tau=STEFAN_BOLTZMANN * 37.0, t_min=CFG.t_min,
                                 t_max=CFG.t_max, window=11, depth_floor=1e-3)
        a = np.asarray(radiation_map(t, d, CFG))
        b = np.asarray(radiation_map(t, d, scaled))
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_gradient_flows_into_depth(self):
        rng = np.random.default_rng(3)
        pset = ParamSet()
        depth = pset.add("depth", rng.uniform(0.5, 2.0, (6, 6)), "g")
        t = rng.uniform(0.2, 0.8, (6, 6))

        def loss():
            return ad.tmean(radiation_map(t, depth, CFG))

        report = finite_difference_check(loss, pset, h=1e-6)
        assert report.max_rel_error < 1e-3


class TestSSSIM:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, (16, 16))
        scalar, smap = s_ssim(a, a, window=11)
        assert abs(scalar - 1.0) <= 1e-6
        assert np.abs(np.asarray(smap) - 1.0).max() <= 1e-5

    def test_negated_image_scores_minus_one(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, (16, 16))
        scalar, _ = s_ssim(a, -a, window=11)
        assert abs(scalar + 1.0) <= 1e-6

    def test_constant_second_image_scores_zero(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (12, 12))
        scalar, _ = s_ssim(a, np.full_like(a, 0.6), window=11)
        assert abs(scalar) <= 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        a, b = rng.uniform(0, 1, (10, 10)), rng.uniform(0, 1, (10, 10))
        s_ab, _ = s_ssim(a, b)
        s_ba, _ = s_ssim(b, a)
        np.testing.assert_allclose(s_ab, s_ba, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            s_ssim(np.zeros((4, 4)), np.zeros((4, 5)))


class TestDepthUncertainty:
    def test_zero_filter_gives_half(self):
        u = depth_uncertainty(np.random.default_rng(8).uniform(1, 3, (6, 6)),
                              init_uncertainty_params())
        np.testing.assert_allclose(np.asarray(u), 0.5)

    def test_large_negative_bias_saturates_low(self):
        params = init_uncertainty_params()
        params["psi_b"] = np.asarray(-50.0)
        u = depth_uncertainty(np.ones((4, 4)), params)
        assert np.asarray(u).max() < 1e-12

    def test_zero_sum_kernel_on_uniform_depth(self):
        params = init_uncertainty_params()
        params["psi_w"] = np.array([[0, 1, 0], [1, -4.0, 1], [0, 1, 0]])
        u = depth_uncertainty(np.full((5, 5), 2.7), params)
        np.testing.assert_allclose(np.asarray(u), 0.5, atol=1e-12)


class TestBoltzLoss:
    def test_zero_when_structure_agrees_and_certain(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(0, 1, (12, 12))
        loss = boltz_loss(a, a, np.zeros_like(a), window=11)
        assert abs(float(np.asarray(loss))) <= 1e-6

    def test_one_when_no_structure_and_certain(self):
        rng = np.random.default_rng(10)
        a = rng.uniform(0, 1, (12, 12))
        loss = boltz_loss(a, np.full_like(a, 0.4), np.zeros_like(a), window=11)
        assert abs(float(np.asarray(loss)) - 1.0) <= 1e-6

    def test_optimal_uncertainty_is_log_one_minus_s(self):
        # With constant s < 1, d/du [(1-s)e^-u + u] = 0 at u = ln(1 - s);
        # verify both analytically and on a numeric grid.
        for s in (0.0, 0.3, 0.7):
            u_star = np.log(1.0 - s) if s > 0 else 0.0
            us = np.linspace(u_star - 1.0, u_star + 1.0, 201)
            vals = (1.0 - s) / np.exp(us) + us
            argmin = us[np.argmin(vals)]
            assert abs(argmin - u_star) < 0.02
            # convexity on the grid
            assert np.all(np.diff(vals, 2) > -1e-12)

    def test_gradient_to_psi_matches_fd(self):
        rng = np.random.default_rng(11)
        pset = ParamSet()
        pset.add("psi_w", rng.normal(0, 0.2, (3, 3)), "g")
        pset.add("psi_b", np.asarray(0.1), "g")
        depth = pset.add("depth", rng.uniform(0.5, 2.0, (8, 8)), "g")
        i_t = rng.uniform(0, 1, (8, 8))
        t_gt = rng.uniform(0.2, 0.8, (8, 8))

        def loss():
            e_r = radiation_map(t_gt, depth, CFG)
            u = depth_uncertainty(depth, pset)
            return boltz_loss(tensor(i_t), e_r, u, window=5)

        report = finite_difference_check(loss, pset, h=1e-6, max_coords=60)
        assert report.max_rel_error < 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            boltz_loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((5, 4)))

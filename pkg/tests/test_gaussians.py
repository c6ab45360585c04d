"""Covariance construction, density evaluation and cloud validation."""

import numpy as np

from conftest import quat_multiply, quat_rotate, random_unit_quaternion
from thermosplat.gaussians import (GaussianCloud, covariance_from_rs,
                                   gaussian_density, inverse_sigmoid,
                                   min_log_scale, random_cloud,
                                   stable_unit_quaternions, validate_cloud)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class TestCovariance:
    def test_identity(self):
        cov = covariance_from_rs(IDENTITY, np.zeros(3))
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-15)

    def test_axis_scaling(self):
        cov = covariance_from_rs(IDENTITY, np.array([np.log(2.0), 0.0, 0.0]))
        np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_rotation_about_z(self):
        # Oracle: R Sigma_axis R^T multiplied out with an explicit z-rotation.
        theta = np.pi / 2
        q = np.array([np.cos(theta / 2), 0.0, 0.0, np.sin(theta / 2)])
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        expected = rz @ np.diag([4.0, 1.0, 1.0]) @ rz.T
        cov = covariance_from_rs(q, np.array([np.log(2.0), 0.0, 0.0]))
        np.testing.assert_allclose(cov, expected, atol=1e-12)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_symmetry_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = random_unit_quaternion(rng)
            ls = rng.uniform(-2, 1, 3)
            cov = covariance_from_rs(q, ls)
            assert np.abs(cov - cov.T).max() < 1e-12

    def test_eigenvalues_are_squared_scales(self):
        rng = np.random.default_rng(1)
        q = random_unit_quaternion(rng)
        ls = np.array([0.3, -0.5, 1.1])
        cov = covariance_from_rs(q, ls)
        eig = np.sort(np.linalg.eigvalsh(cov))
        np.testing.assert_allclose(eig, np.sort(np.exp(2 * ls)), rtol=1e-10)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(2)
        qs = np.stack([random_unit_quaternion(rng) for _ in range(4)])
        ls = rng.uniform(-1, 1, (4, 3))
        batch = covariance_from_rs(qs, ls)
        for i in range(4):
            np.testing.assert_allclose(batch[i], covariance_from_rs(qs[i], ls[i]))


class TestDensity:
    def test_peak_at_center(self):
        mu = np.array([0.3, -0.2, 1.0])
        assert gaussian_density(mu, IDENTITY, np.zeros(3), mu) == 1.0

    def test_unit_distance(self):
        d = gaussian_density(np.zeros(3), IDENTITY, np.zeros(3), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(d, np.exp(-0.5), rtol=1e-12)

    def test_anisotropic_quadratic_form(self):
        # Sigma = diag(4,1,1); offset (2,0,0) gives Mahalanobis^2 = 1.
        ls = np.array([np.log(2.0), 0.0, 0.0])
        d = gaussian_density(np.zeros(3), IDENTITY, ls, [2.0, 0.0, 0.0])
        np.testing.assert_allclose(d, np.exp(-0.5), rtol=1e-10)

    def test_rotation_invariance(self):
        # Rotating the offset and the Gaussian by the same quaternion must
        # not change the density.
        rng = np.random.default_rng(7)
        for _ in range(100):
            q = random_unit_quaternion(rng)
            r = random_unit_quaternion(rng)
            ls = rng.uniform(-1.5, 0.5, 3)
            offset = rng.normal(size=3)
            base = gaussian_density(np.zeros(3), q, ls, offset)
            rotated = gaussian_density(np.zeros(3), quat_multiply(r, q), ls,
                                       quat_rotate(r, offset))
            np.testing.assert_allclose(rotated, base, rtol=1e-9)

    def test_monotone_decay_along_rays(self):
        rng = np.random.default_rng(8)
        q = random_unit_quaternion(rng)
        ls = rng.uniform(-1, 0.5, 3)
        for _ in range(10):
            direction = rng.normal(size=3)
            ts = np.linspace(0.1, 3.0, 12)
            vals = [gaussian_density(np.zeros(3), q, ls, t * direction) for t in ts]
            assert all(a > b for a, b in zip(vals, vals[1:]))


def _cloud(rng, count=5):
    return random_cloud(rng, count, extent=1.0)


class TestValidateCloud:
    def test_well_formed(self):
        assert validate_cloud(_cloud(np.random.default_rng(0))) == []

    def test_nan_named_with_index_and_field(self):
        cloud = _cloud(np.random.default_rng(0))
        cloud.mu[3, 1] = np.nan
        issues = validate_cloud(cloud)
        assert len(issues) == 1
        assert "mu" in issues[0] and "3" in issues[0]

    def test_length_mismatch_is_structural(self):
        cloud = _cloud(np.random.default_rng(0))
        cloud.o_t = cloud.o_t[:-1]
        issues = validate_cloud(cloud)
        assert any("shape" in msg for msg in issues)

    def test_zero_quaternion_flagged(self):
        cloud = _cloud(np.random.default_rng(0))
        cloud.rot[2] = 0.0
        assert any("quaternion" in msg for msg in validate_cloud(cloud))


class TestHelpers:
    def test_inverse_sigmoid_round_trip(self):
        from scipy.special import expit
        y = np.array([0.01, 0.4, 0.9, 0.999])
        np.testing.assert_allclose(expit(inverse_sigmoid(y)), y, rtol=1e-12)

    def test_stable_quaternions_are_renorm_fixed_points(self):
        rng = np.random.default_rng(4)
        q = stable_unit_quaternions(rng.normal(size=(32, 4)))
        again = q / np.linalg.norm(q, axis=1, keepdims=True)
        assert np.array_equal(q, again)

    def test_min_log_scale_tracks_extent(self):
        assert min_log_scale(2.0) == np.log(2e-6)

    def test_random_cloud_invariants(self):
        cloud = random_cloud(np.random.default_rng(5), 40, extent=2.0)
        assert validate_cloud(cloud) == []
        assert cloud.count == 40
        assert np.abs(cloud.mu).max() <= 2.0
        sliced = cloud[np.array([0, 3, 5])]
        assert sliced.count == 3
        assert isinstance(sliced, GaussianCloud)

"""Mixture component types, responsibilities, and latent moments."""

import numpy as np
import pytest
import scipy.stats

from conftest import (
    dense_latent_moments,
    random_component,
    random_mixture,
    rng_for,
)
from mvbfa.dataio import DataSet3D
from mvbfa.errors import DegeneracyError, InputError
from mvbfa.matnorm import LOG_2PI
from mvbfa.model import (
    ComponentParams,
    MixtureParams,
    ObsCache,
    component_log_density,
    latent_moments,
    log_joint_matrix,
    map_classify,
    resp_from_log_joint,
    responsibilities,
)


class TestComponentParams:
    def test_factor_count_bounds(self, rng):
        with pytest.raises(InputError):
            random_component(rng, 3, 4, 3, 1)  # q == n
        with pytest.raises(InputError):
            random_component(rng, 3, 4, 1, 4)  # r == p

    def test_weight_range(self, rng):
        for bad in (0.0, -0.2, 1.5):
            with pytest.raises(InputError):
                random_component(rng, 3, 3, 1, 1, weight=bad)

    def test_mixture_weight_sum(self, rng):
        a = random_component(rng, 3, 3, 1, 1, weight=0.6)
        b = random_component(rng, 3, 3, 1, 1, weight=0.5)
        with pytest.raises(InputError):
            MixtureParams((a, b))

    def test_mixture_shape_agreement(self, rng):
        a = random_component(rng, 3, 3, 1, 1, weight=0.5)
        b = random_component(rng, 4, 3, 1, 1, weight=0.5)
        with pytest.raises(InputError):
            MixtureParams((a, b))


class TestComponentLogDensity:
    def test_identity_scales_at_mean(self):
        n, p = 3, 4
        comp = ComponentParams(1.0, np.zeros((n, p)), np.zeros((n, 0)),
                               np.zeros((p, 0)), np.ones(n), np.ones(p))
        got = component_log_density(np.zeros((n, p)), comp)
        assert abs(got - (-(n * p / 2) * LOG_2PI)) < 1e-12

    def test_univariate_zero_width_loadings(self):
        comp = ComponentParams(1.0, np.zeros((1, 1)), np.zeros((1, 0)),
                               np.zeros((1, 0)), np.array([1.0]), np.array([2.0]))
        got = component_log_density(np.array([[1.0]]), comp)
        expect = scipy.stats.norm.logpdf(1.0, 0.0, np.sqrt(2.0))
        assert abs(got - expect) < 1e-12

    def test_rotation_invariance(self, rng):
        comp = random_component(rng, 6, 5, 3, 2)
        qmat, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        rmat, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        rotated = ComponentParams(comp.weight, comp.mean,
                                  comp.left_loading @ qmat,
                                  comp.right_loading @ rmat,
                                  comp.row_noise, comp.col_noise)
        for _ in range(10):
            x = comp.mean + rng.standard_normal((6, 5))
            a = component_log_density(x, comp)
            b = component_log_density(x, rotated)
            assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


class TestResponsibilities:
    def test_identical_components_half(self, rng):
        comp = random_component(rng, 3, 3, 1, 1, weight=0.5)
        params = MixtureParams((comp, ComponentParams(
            0.5, comp.mean, comp.left_loading, comp.right_loading,
            comp.row_noise, comp.col_noise)))
        data = DataSet3D(rng.standard_normal((8, 3, 3)))
        resp = responsibilities(data, params)
        np.testing.assert_allclose(resp, 0.5, atol=1e-12)

    def test_single_component_exactly_one(self, rng):
        params = MixtureParams((random_component(rng, 3, 2, 1, 1),))
        data = DataSet3D(rng.standard_normal((5, 3, 2)))
        np.testing.assert_array_equal(responsibilities(data, params), 1.0)

    def test_separated_components(self, rng):
        params = random_mixture(rng, 2, 4, 3, 1, 1, spread=30.0)
        x = params.components[0].mean[None]
        resp = responsibilities(DataSet3D(x), params)
        assert resp[0, 0] >= 0.99

    def test_rows_sum_to_one_extreme_separation(self, rng):
        params = random_mixture(rng, 3, 6, 5, 2, 2, spread=400.0)
        data = DataSet3D(np.stack([c.mean for c in params.components]))
        resp = responsibilities(data, params)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        assert ((resp >= 0) & (resp <= 1)).all()

    def test_labeled_rows_one_hot(self, rng):
        params = random_mixture(rng, 2, 3, 3, 1, 1)
        obs = rng.standard_normal((6, 3, 3))
        labels = np.array([0, 1, 2, 0, 2, 1])
        resp = responsibilities(DataSet3D(obs, labels), params)
        np.testing.assert_array_equal(resp[1], [1.0, 0.0])
        np.testing.assert_array_equal(resp[2], [0.0, 1.0])
        np.testing.assert_array_equal(resp[4], [0.0, 1.0])
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)

    def test_label_exceeding_G_rejected(self, rng):
        params = random_mixture(rng, 2, 3, 3, 1, 1)
        data = DataSet3D(rng.standard_normal((3, 3, 3)), np.array([0, 3, 1]))
        with pytest.raises(InputError):
            responsibilities(data, params)

    def test_nan_density_names_observation(self, rng):
        params = random_mixture(rng, 2, 3, 3, 1, 1)
        cache = ObsCache(DataSet3D(rng.standard_normal((4, 3, 3))))
        joint = log_joint_matrix(cache, params)
        joint[2, 1] = np.nan
        with pytest.raises(DegeneracyError, match="observation 2"):
            resp_from_log_joint(cache, joint)

    def test_shape_mismatch(self, rng):
        params = random_mixture(rng, 2, 3, 3, 1, 1)
        with pytest.raises(InputError):
            responsibilities(DataSet3D(rng.standard_normal((4, 2, 3))), params)


class TestLatentMoments:
    def test_zero_left_loading(self, rng):
        n, p, q = 5, 4, 2
        comp = ComponentParams(1.0, rng.standard_normal((n, p)),
                               np.zeros((n, q)), rng.standard_normal((p, 1)),
                               0.1 + rng.random(n), 0.1 + rng.random(p))
        lm = latent_moments(comp.mean + rng.standard_normal((n, p)), comp)
        np.testing.assert_array_equal(lm.left_mean, np.zeros((q, p)))
        np.testing.assert_allclose(lm.left_scatter, p * np.eye(q), atol=1e-12)

    def test_zero_right_loading(self, rng):
        n, p, r = 5, 4, 2
        comp = ComponentParams(1.0, rng.standard_normal((n, p)),
                               rng.standard_normal((n, 1)), np.zeros((p, r)),
                               0.1 + rng.random(n), 0.1 + rng.random(p))
        lm = latent_moments(comp.mean + rng.standard_normal((n, p)), comp)
        np.testing.assert_array_equal(lm.right_mean, np.zeros((n, r)))
        np.testing.assert_allclose(lm.right_scatter, n * np.eye(r), atol=1e-12)

    def test_dense_oracle(self):
        rng = rng_for(0x1A7E)
        for _ in range(50):
            comp = random_component(rng, 5, 4, 2, 2)
            x = comp.mean + rng.standard_normal((5, 4))
            lm = latent_moments(x, comp)
            a_b, b_b, a_a, b_a = dense_latent_moments(x, comp)
            np.testing.assert_allclose(lm.left_mean, a_b, atol=1e-9)
            np.testing.assert_allclose(lm.left_scatter, b_b, atol=1e-9)
            np.testing.assert_allclose(lm.right_mean, a_a, atol=1e-9)
            np.testing.assert_allclose(lm.right_scatter, b_a, atol=1e-9)

    def test_scatter_residuals_positive_definite(self):
        # left_scatter - aB inv(col) aB' and the right-side mirror stay PD
        rng = rng_for(0x9D)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            p = int(rng.integers(2, 7))
            q = int(rng.integers(1, n))
            r = int(rng.integers(1, p))
            comp = random_component(rng, n, p, q, r)
            x = comp.mean + rng.standard_normal((n, p))
            lm = latent_moments(x, comp)
            lam_b_inv = np.linalg.inv(comp.col_scale.dense())
            lam_a_inv = np.linalg.inv(comp.row_scale.dense())
            left = lm.left_scatter - lm.left_mean @ lam_b_inv @ lm.left_mean.T
            right = lm.right_scatter - lm.right_mean.T @ lam_a_inv @ lm.right_mean
            assert np.linalg.eigvalsh(left).min() > 0
            assert np.linalg.eigvalsh(right).min() > 0

    def test_dimension_check(self, rng):
        comp = random_component(rng, 3, 4, 1, 1)
        with pytest.raises(InputError):
            latent_moments(np.zeros((4, 3)), comp)


class TestMapClassify:
    def test_argmax_and_tie_break(self):
        resp = np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
        np.testing.assert_array_equal(map_classify(resp), [2, 1, 1])

    def test_one_hot_recovers_labels(self, rng):
        labels = rng.integers(1, 4, size=20)
        resp = np.zeros((20, 3))
        resp[np.arange(20), labels - 1] = 1.0
        np.testing.assert_array_equal(map_classify(resp), labels)

    def test_monotone_transform_invariance(self, rng):
        resp = rng.dirichlet(np.ones(3), size=30)
        # strictly increasing map changes values, not the argmax
        np.testing.assert_array_equal(map_classify(resp),
                                      map_classify(np.exp(3.0 * resp)))

    def test_bad_shape(self):
        with pytest.raises(InputError):
            map_classify(np.zeros(4))

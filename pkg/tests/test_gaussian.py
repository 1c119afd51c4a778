#!/usr/bin/env python3
"""
Unit tests for the Gaussian core
Representations, dense conditioning, the linear-Gaussian marginal and the
reference Kalman filter
"""

import unittest
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

# Add hiprssm/src to Python path for imports
src_dir = Path(__file__).parent.parent / "hiprssm" / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from errors import DimensionMismatch, OddLatentDim, PatternViolation, PSDViolation, SingularMatrix
from gaussian import (DenseGaussian, DiagGaussian, FactorizedBelief, block_min_eigenvalue,
                      blocks_to_dense, dense_condition, dense_kalman_filter, from_dense,
                      identity1_marginal, to_dense)


def random_belief(rng, m):
    var_u = rng.uniform(0.2, 3.0, m)
    var_l = rng.uniform(0.2, 3.0, m)
    cov_s = rng.uniform(-0.9, 0.9, m) * np.sqrt(var_u * var_l)
    return FactorizedBelief(rng.normal(size=2 * m), var_u, var_l, cov_s)


def random_spd(rng, d):
    M = rng.normal(size=(d, d))
    return M @ M.T + 0.5 * np.eye(d)


class TestRepresentations(unittest.TestCase):
    """Validation rules of the three Gaussian types"""

    def test_diag_gaussian_rejects_shape_mismatch(self):
        """Mean and variance must share a shape"""
        with self.assertRaises(DimensionMismatch):
            DiagGaussian(np.zeros(3), np.ones(2))

    def test_diag_gaussian_rejects_nonpositive_variance(self):
        """Variances are strictly positive"""
        with self.assertRaises(ValueError):
            DiagGaussian(np.zeros(2), np.array([1.0, 0.0]))

    def test_diag_gaussian_is_immutable(self):
        """Arrays are copied and frozen"""
        source = np.ones(3)
        g = DiagGaussian(np.zeros(3), source)
        source[0] = 5.0
        self.assertEqual(g.var[0], 1.0)
        with self.assertRaises(ValueError):
            g.mean[0] = 1.0

    def test_factorized_belief_rejects_indefinite_block(self):
        """|cov_s| larger than sqrt(var_u var_l) is not a covariance"""
        with self.assertRaises(PSDViolation):
            FactorizedBelief(np.zeros(2), np.array([1.0]), np.array([1.0]), np.array([1.5]))

    def test_factorized_belief_rejects_wrong_mean_length(self):
        """mean holds 2m values"""
        with self.assertRaises(DimensionMismatch):
            FactorizedBelief(np.zeros(3), np.ones(2), np.ones(2), np.zeros(2))

    def test_initial_belief(self):
        """Zero mean, equal variances, no correlation"""
        b = FactorizedBelief.initial(3, variance=10.0, batch=2)
        self.assertEqual(b.mean.shape, (2, 6))
        np.testing.assert_array_equal(b.var_u, np.full((2, 3), 10.0))
        np.testing.assert_array_equal(b.cov_s, np.zeros((2, 3)))

    def test_dense_gaussian_rejects_asymmetric(self):
        """Dense covariances must be symmetric"""
        with self.assertRaises(PSDViolation):
            DenseGaussian(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_to_dense_layout(self):
        """Blocks land on the diagonals of the four quadrants"""
        b = FactorizedBelief(np.arange(4.0), np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([0.5, -0.5]))
        cov = to_dense(b).cov
        np.testing.assert_array_equal(np.diag(cov), [1.0, 2.0, 3.0, 4.0])
        self.assertEqual(cov[0, 2], 0.5)
        self.assertEqual(cov[3, 1], -0.5)
        self.assertEqual(cov[0, 1], 0.0)

    def test_from_dense_rejects_pattern_violation(self):
        """Entries outside the four diagonals are refused"""
        cov = np.eye(4)
        cov[0, 1] = cov[1, 0] = 0.1
        with self.assertRaises(PatternViolation):
            from_dense(DenseGaussian(np.zeros(4), cov))

    def test_from_dense_rejects_odd_dimension(self):
        """A factorized belief needs an even dimension"""
        with self.assertRaises(OddLatentDim):
            from_dense(DenseGaussian(np.zeros(3), np.eye(3)))

    def test_from_dense_inverts_to_dense(self):
        """Compressing an expanded belief gives back the same vectors"""
        b = random_belief(np.random.default_rng(3), 4)
        back = from_dense(to_dense(b))
        np.testing.assert_array_equal(back.var_u, b.var_u)
        np.testing.assert_array_equal(back.cov_s, b.cov_s)

    @given(st.floats(0.01, 50.0), st.floats(0.01, 50.0), st.floats(-0.99, 0.99))
    @settings(max_examples=200, deadline=None)
    def test_block_min_eigenvalue_matches_eigvalsh(self, u, l, rho):
        """Closed-form 2x2 eigenvalue equals the numerical one"""
        s = rho * np.sqrt(u * l)
        expected = np.linalg.eigvalsh(np.array([[u, s], [s, l]]))[0]
        got = block_min_eigenvalue(np.array([u]), np.array([l]), np.array([s]))[0]
        self.assertAlmostEqual(got, expected, delta=1e-9 * max(1.0, u + l))


class TestDenseCondition(unittest.TestCase):
    """Full-matrix conditioning used as the oracle for the factorized cell"""

    def test_scalar_conditioning(self):
        """Scalar case reduces to the textbook precision-weighted average"""
        prior = DenseGaussian(np.array([1.0]), np.array([[4.0]]))
        post = dense_condition(prior, [3.0], [1.0], [[1.0]])
        self.assertAlmostEqual(post.mean[0], 1.0 + 4.0 / 5.0 * 2.0)
        self.assertAlmostEqual(post.cov[0, 0], 4.0 / 5.0)

    def test_singular_innovation(self):
        """Innovation covariance with condition number above 1e12 is refused"""
        prior = DenseGaussian(np.zeros(2), np.diag([1e14, 1.0]))
        with self.assertRaises(SingularMatrix):
            dense_condition(prior, [0.0, 0.0], [1e-3, 1e-3], np.eye(2))

    def test_dimension_mismatch(self):
        """H must map the prior to the observation"""
        prior = DenseGaussian(np.zeros(2), np.eye(2))
        with self.assertRaises(DimensionMismatch):
            dense_condition(prior, [0.0], [1.0], np.eye(2))


class TestIdentity1Marginal(unittest.TestCase):
    """Analytic marginal of y = A u + b + B v + eps against Monte Carlo"""

    SAMPLES = 1_000_000

    def check_instance(self, rng, du, dv, dy):
        mu_u, mu_v, b = rng.normal(size=du), rng.normal(size=dv), rng.normal(size=dy)
        Su, Sv, S = random_spd(rng, du), random_spd(rng, dv), random_spd(rng, dy)
        A, B = rng.normal(size=(dy, du)), rng.normal(size=(dy, dv))
        analytic = identity1_marginal(mu_u, Su, mu_v, Sv, A, B, b, S)

        u = rng.multivariate_normal(mu_u, Su, size=self.SAMPLES)
        v = rng.multivariate_normal(mu_v, Sv, size=self.SAMPLES)
        eps = rng.multivariate_normal(np.zeros(dy), S, size=self.SAMPLES)
        y = u @ A.T + b + v @ B.T + eps

        cov = analytic.cov
        mean_se = np.sqrt(np.diag(cov) / self.SAMPLES)
        np.testing.assert_array_less(np.abs(y.mean(axis=0) - analytic.mean), 4 * mean_se)
        sample_cov = np.cov(y, rowvar=False).reshape(dy, dy)
        for i in range(dy):
            for j in range(i, dy):
                se = np.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / self.SAMPLES)
                self.assertLess(abs(sample_cov[i, j] - cov[i, j]), 4 * se)

    def test_scalar_instances(self):
        """10 scalar instances"""
        rng = np.random.default_rng(11)
        for _ in range(10):
            self.check_instance(rng, 1, 1, 1)

    def test_three_dim_instances(self):
        """10 three-dimensional instances"""
        rng = np.random.default_rng(12)
        for _ in range(10):
            self.check_instance(rng, 3, 3, 3)

    def test_shape_check(self):
        """A must be (dy, du)"""
        with self.assertRaises(DimensionMismatch):
            identity1_marginal(np.zeros(2), np.eye(2), np.zeros(1), np.eye(1),
                               np.eye(3), np.zeros((2, 1)), np.zeros(2), np.eye(2))


class TestDenseKalmanFilter(unittest.TestCase):
    """Reference filter ordering and masking"""

    def test_masked_steps_only_predict(self):
        """A masked step passes the prior through unchanged"""
        rng = np.random.default_rng(0)
        initial = DenseGaussian(np.zeros(2), np.eye(2))
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        Q = 0.01 * np.eye(2)
        H = np.array([[1.0, 0.0]])
        obs = rng.normal(size=(5, 1))
        posteriors, priors = dense_kalman_filter(initial, A, Q, H, obs, np.array([0.1]),
                                                 mask=[True, False, True, True, False])
        np.testing.assert_array_equal(posteriors[1].mean, priors[0].mean)
        np.testing.assert_array_equal(posteriors[4].cov, priors[3].cov)
        self.assertEqual(len(priors), 5)

    def test_prediction_matches_closed_form(self):
        """Predict step is A mu + c and A P A^T + Q"""
        initial = DenseGaussian(np.array([1.0, -1.0]), np.diag([2.0, 3.0]))
        A = blocks_to_dense([0.9], [0.1], [-0.2], [1.0])
        Q = np.diag([0.5, 0.25])
        _, priors = dense_kalman_filter(initial, A, Q, np.array([[1.0, 0.0]]), np.zeros((1, 1)),
                                        np.array([1.0]), mask=[False], controls=np.array([[0.3, 0.0]]))
        np.testing.assert_allclose(priors[0].mean, A @ initial.mean + [0.3, 0.0])
        np.testing.assert_allclose(priors[0].cov, A @ initial.cov @ A.T + Q)


if __name__ == '__main__':
    unittest.main()

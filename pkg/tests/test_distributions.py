"""Closed-form checks for the Gaussian/categorical utilities."""

import numpy as np
import pytest

from primo.autodiff import ContractError, ShapeError, Tensor
from primo.distributions import (
    DiagGaussian,
    kl_diag_gaussian,
    kl_translation_invariance_check,
    reparam_sample,
    tvd,
)

from helpers import max_rel_err, numeric_grad


def _gaussian(mu, sigma, grad=False):
    return DiagGaussian(
        Tensor(np.atleast_2d(np.asarray(mu, dtype=float)), requires_grad=grad),
        Tensor(np.atleast_2d(np.asarray(sigma, dtype=float)), requires_grad=grad),
    )


class TestKL:
    def test_identical_distributions_give_zero(self):
        g = _gaussian([0.3, -1.2], [0.7, 2.0])
        h = _gaussian([0.3, -1.2], [0.7, 2.0])
        np.testing.assert_allclose(kl_diag_gaussian(g, h).data, [0.0], atol=1e-12)

    def test_unit_variance_collapses_to_half_squared_norm(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((4, 3))
        q = DiagGaussian(Tensor(mu), Tensor(np.ones_like(mu)))
        p = DiagGaussian(Tensor(np.zeros_like(mu)), Tensor(np.ones_like(mu)))
        np.testing.assert_allclose(
            kl_diag_gaussian(q, p).data, 0.5 * (mu**2).sum(axis=1), atol=1e-9
        )

    def test_one_dimensional_hand_value(self):
        # KL(N(1, 0.5^2) || N(0, 1)) = ln 2 + (0.25 + 1)/2 - 0.5
        q = _gaussian([1.0], [0.5])
        p = _gaussian([0.0], [1.0])
        expected = np.log(2.0) + 1.25 / 2.0 - 0.5
        np.testing.assert_allclose(kl_diag_gaussian(q, p).data, [expected], atol=1e-9)
        np.testing.assert_allclose(expected, 0.8181471805599453, atol=1e-12)

    def test_non_negative_and_zero_only_at_equality(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            q = _gaussian(rng.standard_normal(3), np.exp(rng.standard_normal(3)))
            p = _gaussian(rng.standard_normal(3), np.exp(rng.standard_normal(3)))
            val = float(kl_diag_gaussian(q, p).data[0])
            assert val >= 0.0
            if not np.allclose(q.mu.data, p.mu.data) or not np.allclose(
                q.sigma.data, p.sigma.data
            ):
                assert val > 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            kl_diag_gaussian(_gaussian([0.0], [1.0]), _gaussian([0.0, 0.0], [1.0, 1.0]))

    def test_translation_invariance_property(self):
        """KL is unchanged by a common mean shift, over 1000 random triples."""
        rng = np.random.default_rng(2)
        for _ in range(1000):
            d = int(rng.integers(1, 5))
            q = _gaussian(3 * rng.standard_normal(d), np.exp(rng.standard_normal(d)))
            p = _gaussian(3 * rng.standard_normal(d), np.exp(rng.standard_normal(d)))
            shift = 10 * rng.standard_normal(d)
            assert kl_translation_invariance_check(q, p, shift)

    def test_zero_shift_trivially_invariant(self):
        q = _gaussian([1.0, 2.0], [0.4, 0.9])
        p = _gaussian([-1.0, 0.5], [1.5, 0.3])
        assert kl_translation_invariance_check(q, p, np.zeros(2))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        qm = rng.standard_normal((2, 3))
        qs = np.exp(rng.standard_normal((2, 3)))
        pm = rng.standard_normal((2, 3))
        ps = np.exp(rng.standard_normal((2, 3)))
        q = DiagGaussian(Tensor(qm, requires_grad=True), Tensor(qs, requires_grad=True))
        p = DiagGaussian(Tensor(pm, requires_grad=True), Tensor(ps, requires_grad=True))
        from primo.autodiff import tsum

        tsum(kl_diag_gaussian(q, p)).backward()

        def f():
            qq = DiagGaussian(Tensor(qm), Tensor(qs))
            pp = DiagGaussian(Tensor(pm), Tensor(ps))
            return float(kl_diag_gaussian(qq, pp).data.sum())

        fds = numeric_grad(f, [qm, qs, pm, ps])
        for tensor, fd in zip((q.mu, q.sigma, p.mu, p.sigma), fds):
            assert max_rel_err(tensor.grad, fd) <= 1e-4


class TestReparam:
    def test_zero_noise_returns_mean(self):
        g = _gaussian([1.0, -2.0], [0.5, 0.1])
        out = reparam_sample(g, np.zeros((1, 2)))
        np.testing.assert_array_equal(out.data, [[1.0, -2.0]])

    def test_floor_sigma_is_effectively_deterministic(self):
        g = _gaussian([3.0], [1e-4])
        out = reparam_sample(g, np.array([[5.0]]))
        np.testing.assert_allclose(out.data, [[3.0]], atol=1e-3)

    def test_sample_moments(self):
        """Empirical mean/variance of 1e5 draws within 3 standard errors."""
        rng = np.random.default_rng(4)
        n = 100_000
        mu, sigma = 0.7, 1.3
        g = DiagGaussian(
            Tensor(np.full((n, 1), mu)), Tensor(np.full((n, 1), sigma))
        )
        z = reparam_sample(g, rng.standard_normal((n, 1))).data
        se_mean = sigma / np.sqrt(n)
        assert abs(z.mean() - mu) <= 3 * se_mean
        se_var = sigma**2 * np.sqrt(2.0 / (n - 1))
        assert abs(z.var(ddof=1) - sigma**2) <= 3 * se_var

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            reparam_sample(_gaussian([0.0], [1.0]), np.zeros((2, 2)))

    def test_gradients_flow_through_mu_and_sigma(self):
        g = _gaussian([0.5], [2.0], grad=True)
        eps = np.array([[3.0]])
        from primo.autodiff import tsum

        tsum(reparam_sample(g, eps)).backward()
        np.testing.assert_allclose(g.mu.grad, [[1.0]])
        np.testing.assert_allclose(g.sigma.grad, [[3.0]])


class TestTVD:
    def test_identical_is_zero(self):
        assert tvd([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_disjoint_support_is_one(self):
        assert tvd([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_hand_value(self):
        np.testing.assert_allclose(tvd([0.6, 0.4], [0.4, 0.6]), 0.2, atol=1e-12)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            c = int(rng.integers(2, 6))
            p, q, r = (rng.dirichlet(np.ones(c)) for _ in range(3))
            assert tvd(p, q) == pytest.approx(tvd(q, p), abs=1e-12)
            assert tvd(p, r) <= tvd(p, q) + tvd(q, r) + 1e-12
            assert 0.0 <= tvd(p, q) <= 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            tvd([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_unnormalized_rejected(self):
        with pytest.raises(ContractError):
            tvd([0.5, 0.6], [0.5, 0.5])

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            tvd([-0.1, 1.1], [0.5, 0.5])

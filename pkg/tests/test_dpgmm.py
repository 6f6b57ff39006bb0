"""Mixture recovery on known generating processes, bound monotonicity, and
cluster-summary bookkeeping."""

import numpy as np
import pytest

from primo.analysis import PredictionSet, cluster_logits
from primo.autodiff import ContractError
from primo.distributions import softmax_rows
from primo.dpgmm import DpgmmConfig, fit_dpgmm

CENTERS = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])


def make_blobs(k, seed, n_per=100, sigma=1.0):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 42))))
    return np.vstack([c + sigma * rng.standard_normal((n_per, 2)) for c in CENTERS[:k]])


def kept_weights(result, cfg):
    counts = np.bincount(result.assignments, minlength=cfg.truncation)
    w = counts / counts.sum()
    return w[w >= cfg.weight_prune]


class TestRecovery:
    @pytest.mark.parametrize("trial", range(20))
    def test_separated_mixtures_recovered_exactly(self, trial):
        """1-3 components at 10 sigma separation: exact count, weights +-0.05."""
        k = trial % 3 + 1
        pts = make_blobs(k, trial)
        cfg = DpgmmConfig(seed=trial)
        kept = kept_weights(fit_dpgmm(pts, cfg), cfg)
        assert len(kept) == k
        np.testing.assert_allclose(kept, np.full(k, 1.0 / k), atol=0.05)

    def test_identical_rows_collapse_to_one_cluster(self):
        cfg = DpgmmConfig(seed=0)
        result = fit_dpgmm(np.tile([[3.0, -1.0]], (60, 1)), cfg)
        kept = kept_weights(result, cfg)
        np.testing.assert_array_equal(kept, [1.0])

    def test_deterministic_per_seed(self):
        pts = make_blobs(2, 5)
        a = fit_dpgmm(pts, DpgmmConfig(seed=3))
        b = fit_dpgmm(pts, DpgmmConfig(seed=3))
        assert np.array_equal(a.assignments, b.assignments)
        assert a.elbo_trace == b.elbo_trace

    def test_bound_is_monotone(self):
        for seed in range(4):
            res = fit_dpgmm(make_blobs(seed % 3 + 1, seed + 30), DpgmmConfig(seed=seed))
            diffs = np.diff(res.elbo_trace)
            assert np.all(diffs >= -1e-8), f"seed {seed}: bound decreased"


def _prediction_set(logits):
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax_rows(logits)
    return PredictionSet(
        example_id=0, scenario="missing", logits=logits,
        probs=probs, mean_prob=probs.mean(axis=0),
    )


class TestClusterSummaries:
    def test_identical_rows_give_single_full_weight_cluster(self):
        pred = _prediction_set(np.tile([1.0, -2.0], (40, 1)))
        out = cluster_logits(pred, DpgmmConfig(seed=0))
        assert len(out) == 1
        assert out[0].weight == 1.0
        assert out[0].dominant_label == 0

    def test_two_blob_logits_recovered_with_labels(self):
        rng = np.random.default_rng(8)
        a = np.array([6.0, -6.0]) + 0.4 * rng.standard_normal((100, 2))
        b = np.array([-6.0, 6.0]) + 0.4 * rng.standard_normal((100, 2))
        pred = _prediction_set(np.vstack([a, b]))
        out = cluster_logits(pred, DpgmmConfig(seed=1))
        assert len(out) == 2
        np.testing.assert_allclose([c.weight for c in out], [0.5, 0.5], atol=0.05)
        assert {c.dominant_label for c in out} == {0, 1}

    def test_weights_sum_to_one_after_pruning(self):
        rng = np.random.default_rng(9)
        pred = _prediction_set(rng.standard_normal((200, 2)) * 3)
        out = cluster_logits(pred, DpgmmConfig(seed=2))
        assert out == sorted(out, key=lambda c: -c.weight)
        np.testing.assert_allclose(sum(c.weight for c in out), 1.0, atol=1e-12)

    def test_too_few_draws_rejected(self):
        pred = _prediction_set(np.zeros((5, 2)))
        with pytest.raises(ContractError):
            cluster_logits(pred, DpgmmConfig(seed=0))

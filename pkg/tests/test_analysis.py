"""Monte-Carlo prediction, impact metric, analytic oracle, and bias checks."""

import numpy as np
import pytest
from scipy.special import ndtr

from primo.analysis import (
    PredictionSet,
    XorOracle,
    analytic_bayes_oracle_xor,
    bias_analysis,
    bias_from_predictions,
    ecdf,
    impact_from_logits,
    impact_v,
    mc_predict,
    posterior_prior_divergence,
    predict_dataset,
)
from primo.autodiff import ContractError
from primo.data import XorConfig, apply_missingness, generate_xor, split
from primo.distributions import softmax_rows

from helpers import micro_model


@pytest.fixture(scope="module")
def tiny():
    ds = apply_missingness(generate_xor(XorConfig(n_samples=400, seed=20)), 0.5, 21)
    return split(ds, (0.7, 0.3), seed=22)


@pytest.fixture(scope="module")
def model():
    return micro_model(seed=30)


class TestMcPredict:
    def test_constant_classifier_gives_identical_rows(self, tiny):
        model = micro_model(seed=31)
        for p in model.clf.parameters():
            p.tensor.data[:] = 0.0
        model.clf.l1.b.tensor.data[:] = [0.4, -0.4]
        ex = tiny.test[0]
        pred = mc_predict(model, ex, "missing", k=16, seed=5)
        assert np.allclose(pred.logits, pred.logits[0])
        np.testing.assert_allclose(pred.mean_prob, pred.probs[0], atol=1e-15)

    def test_single_draw_mean_equals_row(self, model, tiny):
        pred = mc_predict(model, tiny.test[0], "missing", k=1, seed=5)
        np.testing.assert_array_equal(pred.mean_prob, pred.probs[0])

    def test_complete_scenario_needs_x_m(self, model, tiny):
        missing = [tiny.test[i] for i in range(len(tiny.test)) if tiny.test[i].x_m is None]
        with pytest.raises(ContractError):
            mc_predict(model, missing[0], "complete", k=4, seed=5)

    def test_batched_path_matches_single_example_path(self, model, tiny):
        """Per-example seeding makes results order-independent.

        Draws are bit-identical; tolerance only absorbs BLAS blocking, which
        can differ in the last ulp between batch shapes.
        """
        test = tiny.test.subset(range(12))
        logits = predict_dataset(model, test, "missing", k=8, seed=77)
        for i in range(len(test)):
            single = mc_predict(model, test[i], "missing", k=8, seed=77)
            np.testing.assert_allclose(single.logits, logits[i], rtol=0, atol=1e-10)

    def test_rows_are_proper_distributions(self, model, tiny):
        pred = mc_predict(model, tiny.test[1], "missing", k=32, seed=6)
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(pred.mean_prob.sum(), 1.0, atol=1e-12)


class TestImpact:
    def _pred(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        logits = np.log(probs + 1e-300)
        return PredictionSet(0, "missing", logits, probs, probs.mean(axis=0))

    def test_equal_rows_give_zero(self):
        assert impact_v(self._pred([[0.2, 0.8]] * 5)) == 0.0

    def test_two_opposed_rows_give_half(self):
        v = impact_v(self._pred([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(v, 0.5, atol=1e-12)

    def test_single_draw_rejected(self):
        with pytest.raises(ContractError):
            impact_v(self._pred([[0.5, 0.5]]))

    def test_bounds_hold_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k, c = int(rng.integers(2, 30)), int(rng.integers(2, 5))
            probs = rng.dirichlet(np.ones(c), size=k)
            v = impact_v(self._pred(probs))
            assert 0.0 <= v <= 1.0

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((6, 10, 3))
        vec = impact_from_logits(logits)
        for i in range(6):
            probs = softmax_rows(logits[i])
            scalar = impact_v(PredictionSet(i, "missing", logits[i], probs,
                                            probs.mean(axis=0)))
            np.testing.assert_allclose(vec[i], scalar, atol=1e-12)


class TestEcdf:
    def test_sorted_pairs(self):
        xs, qs = ecdf([3.0, 1.0, 2.0])
        np.testing.assert_array_equal(xs, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(qs, [1 / 3, 2 / 3, 1.0])


class TestXorOracle:
    CFG = XorConfig(seed=0)

    def test_multimodal_is_deterministic_indicator(self):
        probs = analytic_bayes_oracle_xor([-1.0], [-1.0], self.CFG)
        np.testing.assert_array_equal(probs, [1.0, 0.0])
        probs = analytic_bayes_oracle_xor([-1.0], [1.0], self.CFG)
        np.testing.assert_array_equal(probs, [0.0, 1.0])

    def test_far_right_missing_is_confident_class_one(self):
        probs = analytic_bayes_oracle_xor([2.0], None, self.CFG)
        # only the (1, -1) component is plausible; its x_m < 0 mass is ndtr(2)
        np.testing.assert_allclose(probs[1], ndtr(2.0), atol=1e-4)

    def test_far_left_is_maximally_ambiguous(self):
        probs = analytic_bayes_oracle_xor([-3.0], None, self.CFG)
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-6)

    def test_unimodal_matches_mc_oracle(self):
        """Closed-form posterior vs a 1e6-draw conditional frequency check."""
        oracle = XorOracle(self.CFG)
        rng = np.random.default_rng(9)
        comp = rng.choice(3, size=1_000_000, p=np.asarray(self.CFG.weights))
        pts = np.asarray(self.CFG.centers)[comp] + self.CFG.sigma * rng.standard_normal(
            (1_000_000, 2))
        labels = (pts[:, 0] < 0) != (pts[:, 1] < 0)
        for x0 in (-1.5, -1.0, -0.3, 0.2, 1.0, 1.8):
            sel = np.abs(pts[:, 0] - x0) < 0.02
            mc = labels[sel].mean()
            closed = oracle.unimodal_probs([x0])[0, 1]
            assert abs(mc - closed) <= 0.03, f"x_o={x0}: {mc} vs {closed}"

    def test_multimodal_bayes_accuracy_is_one(self):
        assert XorOracle(self.CFG).bayes_accuracy("complete", n_mc=100_000) == 1.0

    def test_unimodal_bayes_accuracy_value(self):
        acc = XorOracle(self.CFG).bayes_accuracy("missing", n_mc=400_000)
        assert 0.6 < acc < 0.72


class TestBias:
    def test_oracle_against_itself_is_zero(self, tiny):
        oracle = XorOracle(XorConfig(seed=20))
        test = tiny.test
        comp_idx = test.complete_indices()
        comp = test.subset(comp_idx)
        uni = oracle.unimodal_probs(test.x_o)
        multi = oracle.multimodal_probs(comp.x_o, comp.x_m)
        report, _ = bias_from_predictions(uni, multi, comp_idx, uni, multi)
        assert report.b_missing == 0.0 and report.b_complete == 0.0
        assert report.oracle_gap > 0.0  # x_m is informative on this geometry

    def test_uniform_model_scores_expected_distance(self, tiny):
        oracle = XorOracle(XorConfig(seed=20))
        test = tiny.test
        comp_idx = test.complete_indices()
        comp = test.subset(comp_idx)
        uni = oracle.unimodal_probs(test.x_o)
        multi = oracle.multimodal_probs(comp.x_o, comp.x_m)
        uniform_all = np.full_like(uni, 0.5)
        uniform_comp = np.full_like(multi, 0.5)
        report, _ = bias_from_predictions(uniform_all, uniform_comp, comp_idx, uni, multi)
        expected_missing = float(np.abs(uni - 0.5).sum(axis=1).mean()) * 0.5
        np.testing.assert_allclose(report.b_missing, expected_missing, atol=1e-12)
        np.testing.assert_allclose(report.b_complete, 0.5, atol=1e-12)

    def test_bias_analysis_end_to_end_shape(self, model, tiny):
        oracle = XorOracle(XorConfig(seed=20))
        report, cols = bias_analysis(
            model, oracle.unimodal_probs, oracle.multimodal_probs,
            tiny.test, k=8, seed=3)
        assert 0.0 <= report.b_missing <= 1.0
        assert 0.0 <= report.b_complete <= 1.0
        assert len(cols["tvd_miss_uni"]) == len(tiny.test)

    def test_class_count_mismatch_rejected(self, model, tiny):
        bad = lambda x_o: np.full((len(x_o), 3), 1 / 3)
        oracle = XorOracle(XorConfig(seed=20))
        with pytest.raises(ContractError):
            bias_analysis(model, bad, oracle.multimodal_probs, tiny.test, k=4, seed=3)


class TestPosteriorDivergence:
    def test_runs_on_mixed_availability(self, model, tiny):
        val = posterior_prior_divergence(model, tiny.test)
        assert np.isfinite(val) and val >= 0.0

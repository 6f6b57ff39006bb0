"""Inference-time analysis: Monte-Carlo marginal prediction, the per-instance
predictive-impact metric, plausible-label clustering, and bias measurement
against Bayes-optimal reference predictors.

Latent draws are seeded per (base seed, example id, scenario), so batched and
single-example prediction paths produce identical numbers and results never
depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .autodiff import ContractError, Tensor, no_grad
from .data import Dataset, Example, XorConfig
from .distributions import softmax_rows, tvd_rows
from .dpgmm import DpgmmConfig, fit_dpgmm
from .model import PrimoModel

SCENARIOS = ("missing", "complete")
_SCENARIO_CODE = {"missing": 0, "complete": 1}
_PREDICT_CHUNK = 512


@dataclass
class PredictionSet:
    """K latent-draw predictions for one example under one scenario."""

    example_id: int
    scenario: str
    logits: np.ndarray  # (K, C)
    probs: np.ndarray  # (K, C), row-softmax of logits
    mean_prob: np.ndarray  # (C,)

    @property
    def n_draws(self):
        return self.logits.shape[0]


@dataclass
class ImpactReport:
    example_id: int
    v_missing: float
    v_complete: float | None = None

    @property
    def gap(self):
        if self.v_complete is None:
            return None
        return self.v_missing - self.v_complete


@dataclass
class ClusterSummary:
    cluster_id: int
    weight: float
    mean_class_distribution: np.ndarray
    dominant_label: int


@dataclass
class BiasReport:
    """Mean TVDs between marginal predictions and the reference predictors.

    ``b_missing``/``b_complete`` compare each scenario's prediction with its
    matching oracle; the cross terms compare against the opposite oracle and
    exist to show which side of the oracle gap the model sits on.
    """

    b_missing: float
    b_complete: float
    oracle_gap: float
    cross_missing_multi: float
    cross_complete_uni: float
    n_missing_eval: int
    n_complete_eval: int


def _example_eps(seed, example_id, scenario, k, d):
    ss = np.random.SeedSequence((seed, _SCENARIO_CODE[scenario], int(example_id)))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal((k, d))


def predict_dataset(model: PrimoModel, ds: Dataset, scenario, k, seed):
    """(N, K, C) logits for every example under one availability scenario.

    The complete scenario requires x_m on every row; draws come from the
    matching conditional prior and are averaged in probability space by the
    callers that need marginals.
    """
    if scenario not in SCENARIOS:
        raise ContractError(f"unknown scenario {scenario!r}")
    if k < 1:
        raise ContractError("k must be at least 1")
    if scenario == "complete" and not np.all(ds.m_present):
        raise ContractError("complete scenario requires x_m on every example")
    n = len(ds)
    d = model.cfg.latent_dim
    logits = np.empty((n, k, model.cfg.n_classes))
    with no_grad():
        for start in range(0, n, _PREDICT_CHUNK):
            stop = min(start + _PREDICT_CHUNK, n)
            rows = slice(start, stop)
            m = stop - start
            x_m = ds.x_m[rows] if scenario == "complete" else None
            prior = model.prior(ds.x_o[rows], x_m)
            eps = np.stack(
                [_example_eps(seed, ds.ids[i], scenario, k, d) for i in range(start, stop)]
            )
            z = prior.mu.data[:, None, :] + prior.sigma.data[:, None, :] * eps
            feats = model.encode_o(ds.x_o[rows]).data
            feats_rep = np.repeat(feats, k, axis=0)
            out = model.classify_features(Tensor(feats_rep), Tensor(z.reshape(m * k, d)))
            logits[rows] = out.data.reshape(m, k, model.cfg.n_classes)
    return logits


def mean_probs(logits):
    """Average the per-draw probabilities (not the logits) over draws."""
    return softmax_rows(logits).mean(axis=-2)


def dataset_accuracy(model, ds, scenario, k, seed):
    """Accuracy of the Monte-Carlo marginal prediction over labeled rows."""
    labeled = ds.labeled_indices()
    if len(labeled) == 0:
        return float("nan")
    sub_ds = ds.subset(labeled)
    probs = mean_probs(predict_dataset(model, sub_ds, scenario, k, seed))
    return float(np.mean(np.argmax(probs, axis=1) == sub_ds.y))


def mc_predict(model: PrimoModel, example: Example, scenario, k, seed) -> PredictionSet:
    """Prediction set for a single example; see :func:`predict_dataset`."""
    if scenario == "complete" and example.x_m is None:
        raise ContractError(f"example {example.id} has no x_m for the complete scenario")
    ds = Dataset(
        x_o=example.x_o[None, :],
        x_m=(example.x_m if example.x_m is not None else np.full(model.cfg.x_m_dim, np.nan))[
            None, :
        ],
        m_present=np.array([example.x_m is not None]),
        y=np.array([example.y if example.y is not None else -1]),
        ids=np.array([example.id]),
        n_classes=model.cfg.n_classes,
    )
    logits = predict_dataset(model, ds, scenario, k, seed)[0]
    probs = softmax_rows(logits)
    return PredictionSet(
        example_id=example.id,
        scenario=scenario,
        logits=logits,
        probs=probs,
        mean_prob=probs.mean(axis=0),
    )


def impact_v(pred: PredictionSet) -> float:
    """Mean TVD between per-draw predictions and their average."""
    if pred.n_draws < 2:
        raise ContractError("impact metric needs at least 2 draws")
    return float(tvd_rows(pred.probs, pred.mean_prob[None, :]).mean())


def impact_from_logits(logits):
    """Vectorized impact metric over an (N, K, C) logit array."""
    if logits.shape[1] < 2:
        raise ContractError("impact metric needs at least 2 draws")
    probs = softmax_rows(logits)
    mean = probs.mean(axis=1, keepdims=True)
    return 0.5 * np.abs(probs - mean).sum(axis=2).mean(axis=1)


def ecdf(values):
    """Sorted (value, rank/N) pairs for plotting an empirical CDF."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    ranks = np.arange(1, len(values) + 1) / len(values)
    return values, ranks


def cluster_logits(pred: PredictionSet, cfg: DpgmmConfig) -> list[ClusterSummary]:
    """Cluster per-draw logits and summarize each surviving cluster.

    Clusters below the pruning weight are dropped and the remaining weights
    renormalized; summaries use the mean softmax of member rows and are
    sorted by weight, heaviest first.
    """
    if pred.n_draws < 10:
        raise ContractError("clustering needs at least 10 draws")
    result = fit_dpgmm(pred.logits, cfg)
    counts = np.bincount(result.assignments, minlength=cfg.truncation)
    weights = counts / counts.sum()
    kept = np.flatnonzero(weights >= cfg.weight_prune)
    kept_weights = weights[kept] / weights[kept].sum()
    order = np.argsort(-kept_weights, kind="stable")
    summaries = []
    for rank, j in enumerate(order):
        slot = kept[j]
        member_probs = pred.probs[result.assignments == slot]
        mean_dist = member_probs.mean(axis=0)
        summaries.append(
            ClusterSummary(
                cluster_id=rank,
                weight=float(kept_weights[j]),
                mean_class_distribution=mean_dist,
                dominant_label=int(np.argmax(mean_dist)),
            )
        )
    return summaries


# ---------------------------------------------------------------------------
# closed-form reference predictors on the synthetic XOR mixture


class XorOracle:
    """Bayes-optimal predictors for the XOR mixture, in closed form.

    With both coordinates observed the label is a deterministic function of
    the signs. With only x_o observed, the class-1 probability mixes each
    component's responsibility with the Gaussian tail mass of x_m on the
    sign-flipping side.
    """

    def __init__(self, cfg: XorConfig):
        self.cfg = cfg
        self.centers = np.asarray(cfg.centers, dtype=np.float64)
        self.weights = np.asarray(cfg.weights, dtype=np.float64)
        self.sigma = cfg.sigma

    def unimodal_probs(self, x_o):
        """P(y | x_o) as an (N, 2) array."""
        x = np.asarray(x_o, dtype=np.float64).reshape(-1)
        a = self.centers[:, 0]
        b = self.centers[:, 1]
        log_resp = -0.5 * ((x[:, None] - a[None, :]) / self.sigma) ** 2 + np.log(
            self.weights
        )[None, :]
        log_resp -= log_resp.max(axis=1, keepdims=True)
        resp = np.exp(log_resp)
        resp /= resp.sum(axis=1, keepdims=True)
        p_m_neg = ndtr(-b / self.sigma)  # P(x_m < 0 | component)
        p_flip = np.where(x[:, None] < 0, 1.0 - p_m_neg[None, :], p_m_neg[None, :])
        p1 = (resp * p_flip).sum(axis=1)
        return np.stack([1.0 - p1, p1], axis=1)

    def multimodal_probs(self, x_o, x_m):
        """P(y | x_o, x_m): the label is sign-determined, so a 0/1 vector."""
        x = np.asarray(x_o, dtype=np.float64).reshape(-1)
        m = np.asarray(x_m, dtype=np.float64).reshape(-1)
        y1 = ((x < 0) != (m < 0)).astype(np.float64)
        return np.stack([1.0 - y1, y1], axis=1)

    def bayes_accuracy(self, scenario, n_mc=1_000_000, seed=0):
        """Accuracy of the scenario's Bayes rule, by Monte-Carlo integration."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 7))))
        comp = rng.choice(len(self.centers), size=n_mc, p=self.weights)
        pts = self.centers[comp] + self.sigma * rng.standard_normal((n_mc, 2))
        labels = ((pts[:, 0] < 0) != (pts[:, 1] < 0)).astype(np.int64)
        if scenario == "missing":
            probs = self.unimodal_probs(pts[:, 0])
        elif scenario == "complete":
            probs = self.multimodal_probs(pts[:, 0], pts[:, 1])
        else:
            raise ContractError(f"unknown scenario {scenario!r}")
        return float(np.mean(np.argmax(probs, axis=1) == labels))


def analytic_bayes_oracle_xor(x_o, x_m, cfg: XorConfig):
    """Exact class probabilities for one point; x_m=None marginalizes it out."""
    oracle = XorOracle(cfg)
    x_o = np.atleast_1d(np.asarray(x_o, dtype=np.float64))
    if x_m is None:
        return oracle.unimodal_probs(x_o[:1])[0]
    x_m = np.atleast_1d(np.asarray(x_m, dtype=np.float64))
    return oracle.multimodal_probs(x_o[:1], x_m[:1])[0]


# ---------------------------------------------------------------------------
# bias analysis against reference predictors


def bias_from_predictions(p_missing, p_complete, complete_idx, uni, multi):
    """Bias aggregates from precomputed marginal predictions.

    ``p_missing`` covers every test row, ``p_complete`` only the rows listed
    in ``complete_idx``; ``uni``/``multi`` are the matching oracle outputs.
    """
    if uni.shape != p_missing.shape:
        raise ContractError(
            f"unimodal oracle produced shape {uni.shape}, expected {p_missing.shape}"
        )
    if multi.shape != p_complete.shape:
        raise ContractError(
            f"multimodal oracle produced shape {multi.shape}, expected {p_complete.shape}"
        )
    tvd_miss_uni = tvd_rows(p_missing, uni)
    tvd_miss_multi = tvd_rows(p_missing[complete_idx], multi)
    tvd_comp_multi = tvd_rows(p_complete, multi)
    tvd_comp_uni = tvd_rows(p_complete, uni[complete_idx])
    tvd_oracles = tvd_rows(uni[complete_idx], multi)
    report = BiasReport(
        b_missing=float(tvd_miss_uni.mean()),
        b_complete=float(tvd_comp_multi.mean()),
        oracle_gap=float(tvd_oracles.mean()),
        cross_missing_multi=float(tvd_miss_multi.mean()),
        cross_complete_uni=float(tvd_comp_uni.mean()),
        n_missing_eval=len(p_missing),
        n_complete_eval=len(p_complete),
    )
    columns = {
        "oracle_uni": uni,
        "oracle_multi": multi,
        "tvd_miss_uni": tvd_miss_uni,
        "tvd_comp_multi": tvd_comp_multi,
        "tvd_miss_multi": tvd_miss_multi,
        "tvd_comp_uni": tvd_comp_uni,
        "tvd_oracles": tvd_oracles,
    }
    return report, columns


def bias_analysis(model: PrimoModel, oracle_uni, oracle_multi, test_ds: Dataset,
                  k, seed) -> tuple[BiasReport, dict]:
    """Compare marginal predictions with unimodal/multimodal oracles.

    ``oracle_uni(x_o) -> (N, C)`` and ``oracle_multi(x_o, x_m) -> (N, C)``
    are probability callables (analytic oracles or trained baselines).
    Returns the aggregate report plus per-example columns for the records
    file. Missing-scenario terms cover every test example; complete-scenario
    terms cover the examples that still have x_m.
    """
    complete = test_ds.complete_indices()
    if len(complete) == 0:
        raise ContractError("bias analysis needs at least one complete test example")
    comp_ds = test_ds.subset(complete)
    p_miss = mean_probs(predict_dataset(model, test_ds, "missing", k, seed))
    p_comp = mean_probs(predict_dataset(model, comp_ds, "complete", k, seed))
    uni = oracle_uni(test_ds.x_o)
    multi = oracle_multi(comp_ds.x_o, comp_ds.x_m)
    report, columns = bias_from_predictions(p_miss, p_comp, complete, uni, multi)
    columns["ids"] = test_ds.ids.copy()
    columns["complete_ids"] = comp_ds.ids.copy()
    columns["p_missing"] = p_miss
    columns["p_complete"] = p_comp
    return report, columns


def posterior_prior_divergence(model: PrimoModel, ds: Dataset, limit=2000):
    """Mean KL(posterior || prior) over labeled examples, matching scenarios.

    Evaluated with running batch-norm statistics; used as the collapse
    diagnostic (zero would mean the label-aware posterior ignores the label).
    """
    from .distributions import kl_diag_gaussian

    labeled = ds.labeled_indices()[:limit]
    if len(labeled) == 0:
        return float("nan")
    sub_ds = ds.subset(labeled)
    values = []
    with no_grad():
        for scenario, idx in (
            ("complete", sub_ds.complete_indices()),
            ("missing", sub_ds.missing_indices()),
        ):
            if len(idx) == 0:
                continue
            part = sub_ds.subset(idx)
            x_m = part.x_m if scenario == "complete" else None
            q = model.posterior(part.x_o, x_m, part.y, mode="eval")
            p = model.prior(part.x_o, x_m)
            values.append(kl_diag_gaussian(q, p).data)
    return float(np.concatenate(values).mean())

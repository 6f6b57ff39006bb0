"""Shared test utilities: finite-difference oracles and model builders.

The gradient oracles here are deliberately independent of the autodiff
engine: they re-evaluate the loss as a black box under central perturbation
of the raw parameter arrays.
"""

import numpy as np
from scipy.special import logsumexp

from primo.autodiff import Tensor, no_grad
from primo.distributions import kl_diag_gaussian
from primo.model import ModelConfig, PrimoModel


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. arrays mutated in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-3):
    """Worst-case elementwise relative error with a small-denominator floor."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def micro_model(seed=0, **overrides):
    """Tiny model for exhaustive gradient checks: d=2, hidden 8."""
    cfg = ModelConfig(hidden_dim=8, encoder_dim=4, latent_dim=2, **overrides)
    return PrimoModel(cfg, seed=seed)


def log_marginal_importance(model, x_o, x_m, y, n_samples, seed):
    """Monte-Carlo estimate of log p(y | inputs) by sampling the prior.

    The marginal is the prior expectation of the per-draw label probability,
    so log-mean-exp of per-draw log-probabilities estimates it directly.
    """
    with no_grad():
        prior = model.prior(x_o[None, :], None if x_m is None else x_m[None, :])
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        eps = rng.standard_normal((n_samples, model.cfg.latent_dim))
        z = prior.mu.data + prior.sigma.data * eps
        feats = model.encode_o(x_o[None, :]).data
        logits = model.classify_features(
            Tensor(np.repeat(feats, n_samples, axis=0)), Tensor(z)
        ).data
        log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
        return float(logsumexp(log_probs[:, y]) - np.log(n_samples))


def elbo_estimate(model, x_o, x_m, y, n_draws, seed):
    """Eval-mode ELBO with the KL in closed form and the expectation by MC."""
    with no_grad():
        x_m_row = None if x_m is None else x_m[None, :]
        q = model.posterior(x_o[None, :], x_m_row, [y], mode="eval")
        p = model.prior(x_o[None, :], x_m_row)
        kl = float(kl_diag_gaussian(q, p).data[0])
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        eps = rng.standard_normal((n_draws, model.cfg.latent_dim))
        z = q.mu.data + q.sigma.data * eps
        feats = model.encode_o(x_o[None, :]).data
        logits = model.classify_features(
            Tensor(np.repeat(feats, n_draws, axis=0)), Tensor(z)
        ).data
        log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
        return float(log_probs[:, y].mean()) - kl

"""Diagonal-Gaussian and categorical utilities used throughout the model.

Everything here is a pure function of its inputs. The Gaussian helpers
operate on autodiff tensors so KL terms and reparameterized samples stay
differentiable; the categorical helpers (total variation distance and
friends) work on plain probability vectors at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, ShapeError, Tensor, add, div, log, mul, square, sub, tsum

SIGMA_FLOOR = 1e-4


@dataclass
class DiagGaussian:
    """Factorized Gaussian over rows: mu and sigma are (B, d) tensors, sigma > 0."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.data.shape != self.sigma.data.shape:
            raise ShapeError(
                f"mu shape {self.mu.data.shape} != sigma shape {self.sigma.data.shape}"
            )

    @property
    def shape(self):
        return self.mu.data.shape


def kl_diag_gaussian(q, p):
    """Per-row KL(q || p) between diagonal Gaussians, differentiable in both.

    Closed form per dimension:
        log(p.sigma / q.sigma) + (q.sigma^2 + (q.mu - p.mu)^2) / (2 p.sigma^2) - 1/2
    """
    if q.shape != p.shape:
        raise ShapeError(f"KL shapes differ: {q.shape} vs {p.shape}")
    log_ratio = sub(log(p.sigma), log(q.sigma))
    var_q = square(q.sigma)
    var_p = square(p.sigma)
    quad = div(add(var_q, square(sub(q.mu, p.mu))), mul(var_p, 2.0))
    per_dim = sub(add(log_ratio, quad), 0.5)
    return tsum(per_dim, axis=1)


def standard_normal_like(g):
    """N(0, I) with the same (B, d) shape as ``g``, as constant tensors."""
    return DiagGaussian(
        Tensor(np.zeros(g.shape)),
        Tensor(np.ones(g.shape)),
    )


def reparam_sample(g, eps):
    """z = mu + sigma * eps with gradients flowing through mu and sigma."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != g.shape:
        raise ShapeError(f"eps shape {eps.shape} != Gaussian shape {g.shape}")
    return add(g.mu, mul(g.sigma, Tensor(eps)))


def kl_translation_invariance_check(q, p, shift, tol=1e-12):
    """Witness that KL between diagonal Gaussians ignores a common mean shift."""
    shift = np.asarray(shift, dtype=np.float64)
    base = kl_diag_gaussian(q, p).data
    q_shift = DiagGaussian(Tensor(q.mu.data + shift), Tensor(q.sigma.data.copy()))
    p_shift = DiagGaussian(Tensor(p.mu.data + shift), Tensor(p.sigma.data.copy()))
    shifted = kl_diag_gaussian(q_shift, p_shift).data
    return bool(np.all(np.abs(base - shifted) <= tol * np.maximum(1.0, np.abs(base))))


# ---------------------------------------------------------------------------
# categorical helpers


def check_prob_vector(p, tol=1e-6):
    """Validate a probability vector; returns it as a float64 array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ContractError(f"probability vector must be 1-D, got shape {p.shape}")
    if np.any(p < -tol):
        raise ContractError("probability vector has negative entries")
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise ContractError(f"probability vector sums to {total!r}, not 1")
    return p


def tvd(p, q):
    """Total variation distance between categorical distributions: 0.5 * L1."""
    p = check_prob_vector(p)
    q = check_prob_vector(q)
    if p.shape != q.shape:
        raise ShapeError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def tvd_rows(p, q):
    """Row-wise TVD between broadcast-compatible arrays of probability rows."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    try:
        np.broadcast_shapes(p.shape, q.shape)
    except ValueError as exc:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}") from exc
    return 0.5 * np.abs(p - q).sum(axis=-1)


def softmax_rows(logits):
    """Numerically stable softmax over the last axis of a plain array."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)

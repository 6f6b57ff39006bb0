"""Training objective and loop.

Each mini-batch is partitioned by modality availability. The objective is the
per-example average of: complete-scenario ELBO terms, missing-scenario ELBO
terms, and the (negated) prior regularizer that anchors the unimodal prior to
N(0, I) and ties the complete prior to the unimodal one. The loop maximizes
this total with AdamW and is bit-deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, ContractError, Tensor
from .data import Dataset, DatasetSplit
from .distributions import kl_diag_gaussian, reparam_sample, standard_normal_like
from .model import PrimoModel, one_hot


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or invalid data)."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    mc_train_samples: int = 1
    reg_weight: float = 1.0
    log_eval_examples: int = 800
    log_eval_draws: int = 16

    def __post_init__(self):
        for name in ("lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        for name in ("batch_size", "mc_train_samples", "reg_weight",
                     "log_eval_examples", "log_eval_draws"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


@dataclass
class LossBreakdown:
    """Per-batch objective components, each averaged over the full batch size.

    ``total`` is the maximized objective:
    (recon_complete - kl_complete) + (recon_missing - kl_missing)
    - (reg_anchor + reg_tie).
    """

    recon_complete: float = 0.0
    kl_complete: float = 0.0
    recon_missing: float = 0.0
    kl_missing: float = 0.0
    reg_anchor: float = 0.0
    reg_tie: float = 0.0
    total: float = 0.0

    def identity_gap(self):
        recomposed = (
            (self.recon_complete - self.kl_complete)
            + (self.recon_missing - self.kl_missing)
            - (self.reg_anchor + self.reg_tie)
        )
        return abs(self.total - recomposed)


@dataclass
class EpochRecord:
    epoch: int
    breakdown: LossBreakdown
    acc_train_missing: float = float("nan")
    acc_train_complete: float = float("nan")
    acc_test_missing: float = float("nan")
    acc_test_complete: float = float("nan")


@dataclass
class TrainResult:
    model: PrimoModel
    epochs: list[EpochRecord] = field(default_factory=list)


def _label_log_prob(model, x_o, z, y):
    """Per-example log p(y | x_o, z) via log-softmax row selection."""
    logits = model.classify(x_o, z)
    mask = Tensor(one_hot(y, model.cfg.n_classes))
    return ad.tsum(ad.mul(ad.log_softmax(logits), mask), axis=1)


def _elbo_parts(model, x_o, x_m, y, rng, n_draws, mode):
    """Per-example reconstruction and KL tensors for one availability scenario."""
    q = model.posterior(x_o, x_m, y, mode=mode)
    p = model.prior(x_o, x_m)
    kl = kl_diag_gaussian(q, p)
    recon = None
    for _ in range(n_draws):
        eps = rng.standard_normal(q.shape)
        z = reparam_sample(q, eps)
        term = _label_log_prob(model, x_o, z, y)
        recon = term if recon is None else ad.add(recon, term)
    if n_draws > 1:
        recon = ad.mul(recon, 1.0 / n_draws)
    return recon, kl


def _check_labeled(ds):
    if np.any(ds.y < 0):
        raise ContractError("training batch contains unlabeled examples")


def elbo_complete(model, batch: Dataset, rng=None, n_draws=1, mode="train"):
    """Mean complete-scenario ELBO over a batch where every x_m is present."""
    if not np.all(batch.m_present):
        raise ContractError("elbo_complete requires x_m on every example")
    _check_labeled(batch)
    rng = rng or np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    recon, kl = _elbo_parts(model, batch.x_o, batch.x_m, batch.y, rng, n_draws, mode)
    return ad.sub(ad.tmean(recon), ad.tmean(kl))


def elbo_missing(model, batch: Dataset, rng=None, n_draws=1, mode="train"):
    """Mean missing-scenario ELBO; any present x_m values are ignored."""
    _check_labeled(batch)
    rng = rng or np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    recon, kl = _elbo_parts(model, batch.x_o, None, batch.y, rng, n_draws, mode)
    return ad.sub(ad.tmean(recon), ad.tmean(kl))


def regularizer_parts(model, batch: Dataset):
    """Summed anchor and tie KL terms over a batch (unweighted sums)."""
    prior_uni = model.prior(batch.x_o, None)
    anchor = ad.tsum(kl_diag_gaussian(prior_uni, standard_normal_like(prior_uni)))
    complete = batch.complete_indices()
    if len(complete) > 0:
        sub_ds = batch.subset(complete)
        prior_multi = model.prior(sub_ds.x_o, sub_ds.x_m)
        prior_uni_c = model.prior(sub_ds.x_o, None)
        tie = ad.tsum(kl_diag_gaussian(prior_multi, prior_uni_c))
    else:
        tie = Tensor(np.float64(0.0))
    return anchor, tie


def regularizer(model, batch: Dataset):
    """Anchor-plus-tie prior regularizer, summed over the batch."""
    anchor, tie = regularizer_parts(model, batch)
    return ad.add(anchor, tie)


def batch_objective(model, batch: Dataset, cfg: TrainConfig, rng, mode="train"):
    """Maximized objective for one mini-batch plus its breakdown.

    Computes the same quantities as the standalone ``elbo_*``/``regularizer``
    ops, but runs each network once on row-stacked inputs so the unimodal
    prior is shared between the missing-scenario ELBO, the anchor term, and
    the tie target, and batch-norm statistics cover the whole mini-batch.
    Availability subsets too small for batch statistics (fewer than two rows
    in train mode) are skipped; the regularizer always covers every row.
    """
    from .distributions import DiagGaussian

    n = len(batch)
    c_idx = batch.complete_indices()
    m_idx = batch.missing_indices()
    min_rows = 2 if (mode == "train" and model.cfg.posterior_bn) else 1
    use_c = len(c_idx) >= min_rows
    use_m = len(m_idx) >= min_rows
    bd = LossBreakdown()
    enc_dim = model.cfg.encoder_dim

    feats_o = model.enc_o(Tensor(batch.x_o))
    fused_uni = ad.concat([feats_o, Tensor(np.zeros((n, enc_dim)))], axis=1)

    # one prior pass: zero-fused rows for everyone, then complete-fused rows
    if len(c_idx) > 0:
        feats_m_c = model.enc_m(Tensor(batch.x_m[c_idx]))
        fused_multi = ad.concat([ad.take_rows(feats_o, c_idx), feats_m_c], axis=1)
        prior_raw = model.prior_net(ad.concat([fused_uni, fused_multi], axis=0))
    else:
        prior_raw = model.prior_net(fused_uni)
    p_mu, p_sigma = model._gaussian_head(prior_raw)

    def prior_rows(start, stop):
        return DiagGaussian(ad.slice_rows(p_mu, start, stop), ad.slice_rows(p_sigma, start, stop))

    def prior_take(idx):
        return DiagGaussian(ad.take_rows(p_mu, idx), ad.take_rows(p_sigma, idx))

    total = None

    def _accumulate(term):
        nonlocal total
        total = term if total is None else ad.add(total, term)

    # one posterior pass over the used rows, one classifier pass per draw
    post_blocks = []
    targets = []
    if use_c:
        onehot_c = Tensor(one_hot(batch.y[c_idx], model.cfg.n_classes))
        post_blocks.append(ad.concat([fused_multi, onehot_c], axis=1))
        targets.append(("complete", c_idx))
    if use_m:
        onehot_m = Tensor(one_hot(batch.y[m_idx], model.cfg.n_classes))
        post_blocks.append(ad.concat([ad.take_rows(fused_uni, m_idx), onehot_m], axis=1))
        targets.append(("missing", m_idx))
    if post_blocks:
        post_in = post_blocks[0] if len(post_blocks) == 1 else ad.concat(post_blocks, axis=0)
        q_mu, q_sigma = model._gaussian_head(model.post_net(post_in))
        if model.cfg.posterior_bn:
            q_mu = ad.batch_norm_mean(q_mu, model.bn, mode)
        q_all = DiagGaussian(q_mu, q_sigma)

        prior_parts = []
        row = 0
        bounds = []
        for scenario, idx in targets:
            if scenario == "complete":
                prior_parts.append(prior_rows(n, n + len(c_idx)))
            else:
                prior_parts.append(prior_take(m_idx))
            bounds.append((row, row + len(idx)))
            row += len(idx)
        p_all = DiagGaussian(
            ad.concat([g.mu for g in prior_parts], axis=0)
            if len(prior_parts) > 1
            else prior_parts[0].mu,
            ad.concat([g.sigma for g in prior_parts], axis=0)
            if len(prior_parts) > 1
            else prior_parts[0].sigma,
        )
        kl = kl_diag_gaussian(q_all, p_all)

        stacked_idx = np.concatenate([idx for _, idx in targets])
        feats_used = ad.take_rows(feats_o, stacked_idx)
        y_used = batch.y[stacked_idx]
        mask = Tensor(one_hot(y_used, model.cfg.n_classes))
        recon = None
        for _ in range(cfg.mc_train_samples):
            z = reparam_sample(q_all, rng.standard_normal(q_all.shape))
            logits = model.classify_features(feats_used, z)
            term = ad.tsum(ad.mul(ad.log_softmax(logits), mask), axis=1)
            recon = term if recon is None else ad.add(recon, term)
        if cfg.mc_train_samples > 1:
            recon = ad.mul(recon, 1.0 / cfg.mc_train_samples)

        for (scenario, _), (lo, hi) in zip(targets, bounds):
            recon_s = ad.tsum(ad.slice_rows(recon, lo, hi))
            kl_s = ad.tsum(ad.slice_rows(kl, lo, hi))
            if scenario == "complete":
                bd.recon_complete = float(recon_s.data) / n
                bd.kl_complete = float(kl_s.data) / n
            else:
                bd.recon_missing = float(recon_s.data) / n
                bd.kl_missing = float(kl_s.data) / n
            _accumulate(ad.sub(recon_s, kl_s))

    # regularizer over every row: anchor on the unimodal prior, tie on pairs
    prior_uni_all = prior_rows(0, n)
    anchor = ad.tsum(kl_diag_gaussian(prior_uni_all, standard_normal_like(prior_uni_all)))
    if len(c_idx) > 0:
        tie = ad.tsum(kl_diag_gaussian(prior_rows(n, n + len(c_idx)), prior_take(c_idx)))
    else:
        tie = Tensor(np.float64(0.0))
    bd.reg_anchor = cfg.reg_weight * float(anchor.data) / n
    bd.reg_tie = cfg.reg_weight * float(tie.data) / n
    _accumulate(ad.mul(ad.add(anchor, tie), -cfg.reg_weight))

    total = ad.mul(total, 1.0 / n)
    bd.total = float(total.data)
    return total, bd


def _epoch_accuracies(model, split, cfg, epoch):
    from .analysis import dataset_accuracy

    rng_seed = (cfg.seed, 2, epoch)
    out = {}
    for tag, ds in (("train", split.train), ("test", split.test)):
        labeled = ds.labeled_indices()
        out[f"{tag}_missing"] = float("nan")
        out[f"{tag}_complete"] = float("nan")
        if len(labeled) == 0:
            continue
        sub_ds = ds.subset(labeled[: cfg.log_eval_examples])
        out[f"{tag}_missing"] = dataset_accuracy(
            model, sub_ds, "missing", cfg.log_eval_draws, rng_seed
        )
        complete = sub_ds.complete_indices()
        if len(complete) > 0:
            out[f"{tag}_complete"] = dataset_accuracy(
                model, sub_ds.subset(complete), "complete", cfg.log_eval_draws, rng_seed
            )
    return out


def train(model: PrimoModel, split: DatasetSplit, cfg: TrainConfig,
          log_accuracy=True) -> TrainResult:
    """Shuffled mini-batch maximization of the joint objective with AdamW."""
    train_ds = split.train
    _check_labeled(train_ds)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 1))))
    result = TrainResult(model=model)
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(7)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = train_ds.subset(order[start : start + cfg.batch_size])
            total, bd = batch_objective(model, batch, cfg, rng)
            if not np.isfinite(bd.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss = ad.neg(total)
            loss.backward()
            opt.step()
            sums += [bd.recon_complete, bd.kl_complete, bd.recon_missing,
                     bd.kl_missing, bd.reg_anchor, bd.reg_tie, bd.total]
            n_batches += 1
        means = sums / max(n_batches, 1)
        record = EpochRecord(epoch=epoch, breakdown=LossBreakdown(*map(float, means)))
        if log_accuracy:
            accs = _epoch_accuracies(model, split, cfg, epoch)
            record.acc_train_missing = accs["train_missing"]
            record.acc_train_complete = accs["train_complete"]
            record.acc_test_missing = accs["test_missing"]
            record.acc_test_complete = accs["test_complete"]
        result.epochs.append(record)
    return result

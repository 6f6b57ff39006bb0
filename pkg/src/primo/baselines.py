"""Plain supervised baselines: a unimodal classifier on x_o and a multimodal
classifier on the fused pair. Same encoder widths as the latent-variable
model, same optimizer protocol, no latent variable.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, ContractError, Tensor, no_grad
from .data import Dataset, DatasetSplit
from .distributions import softmax_rows
from .model import MLP, ModelConfig, one_hot, _as_matrix

KINDS = ("unimodal", "multimodal")


class BaselineClassifier:
    """Cross-entropy MLP classifier over one or both encoded modalities."""

    def __init__(self, kind, cfg: ModelConfig, seed: int):
        if kind not in KINDS:
            raise ContractError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
        self.enc_o = MLP(rng, cfg.x_o_dim, cfg.hidden_dim, cfg.encoder_dim, "enc_o")
        if kind == "multimodal":
            self.enc_m = MLP(rng, cfg.x_m_dim, cfg.hidden_dim, cfg.encoder_dim, "enc_m")
            head_in = 2 * cfg.encoder_dim
        else:
            self.enc_m = None
            head_in = cfg.encoder_dim
        self.head = MLP(rng, head_in, cfg.hidden_dim, cfg.n_classes, "head")

    def parameters(self):
        params = self.enc_o.parameters()
        if self.enc_m is not None:
            params += self.enc_m.parameters()
        return params + self.head.parameters()

    def logits(self, x_o, x_m=None):
        feats = self.enc_o(Tensor(_as_matrix(x_o)))
        if self.kind == "multimodal":
            if x_m is None:
                raise ContractError("multimodal baseline requires x_m")
            feats = ad.concat([feats, self.enc_m(Tensor(_as_matrix(x_m)))], axis=1)
        return self.head(feats)

    def predict_proba(self, x_o, x_m=None):
        with no_grad():
            return softmax_rows(self.logits(x_o, x_m).data)

    def accuracy(self, ds: Dataset):
        labeled = ds.labeled_indices()
        if len(labeled) == 0:
            return float("nan")
        sub_ds = ds.subset(labeled)
        x_m = sub_ds.x_m if self.kind == "multimodal" else None
        probs = self.predict_proba(sub_ds.x_o, x_m)
        return float(np.mean(np.argmax(probs, axis=1) == sub_ds.y))

    def save(self, path):
        header = {"kind": f"baseline-{self.kind}", "seed": self.seed, "model": asdict(self.cfg)}
        ad.save_arrays(path, header, {p.name: p.tensor.data.copy() for p in self.parameters()})

    @staticmethod
    def load(path) -> "BaselineClassifier":
        header, arrays = ad.load_arrays(path)
        kind = header.get("kind", "")
        if not kind.startswith("baseline-"):
            raise ContractError(f"checkpoint at {path} is not a baseline classifier")
        model = BaselineClassifier(
            kind.removeprefix("baseline-"),
            ModelConfig.from_dict(header["model"]),
            seed=header["seed"],
        )
        for p in model.parameters():
            p.tensor.data = arrays[p.name].copy()
        return model


def train_baseline(kind, split: DatasetSplit, train_cfg, model_cfg: ModelConfig,
                   seed: int) -> BaselineClassifier:
    """Train a baseline with AdamW; the multimodal kind sees complete rows only."""
    model = BaselineClassifier(kind, model_cfg, seed)
    ds = split.train
    if kind == "multimodal":
        complete = ds.complete_indices()
        if len(complete) == 0:
            raise ContractError("multimodal baseline needs at least one complete example")
        ds = ds.subset(complete)
    labeled = ds.labeled_indices()
    if len(labeled) < len(ds):
        raise ContractError("baseline training requires labels on every example")
    opt = AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 1))))
    n = len(ds)
    for _ in range(train_cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, train_cfg.batch_size):
            batch = ds.subset(order[start : start + train_cfg.batch_size])
            x_m = batch.x_m if kind == "multimodal" else None
            logits = model.logits(batch.x_o, x_m)
            mask = Tensor(one_hot(batch.y, model_cfg.n_classes))
            loss = ad.neg(ad.tmean(ad.tsum(ad.mul(ad.log_softmax(logits), mask), axis=1)))
            loss.backward()
            opt.step()
    return model

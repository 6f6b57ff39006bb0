"""PRIMO networks: modality encoders, conditional prior, label-aware posterior
with a batch-normalized mean, and the classifier head.

Wiring constraints that the rest of the package relies on:

* one prior network serves both availability scenarios — the missing-modality
  prior is the same network evaluated with the second modality's features
  zeroed before fusion;
* the classifier sees only the encoded first modality and the latent sample,
  never the second modality directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ContractError, Parameter, Tensor
from .distributions import DiagGaussian


@dataclass
class ModelConfig:
    x_o_dim: int = 1
    x_m_dim: int = 1
    n_classes: int = 2
    latent_dim: int = 2
    hidden_dim: int = 128
    encoder_dim: int = 32
    posterior_bn: bool = True
    bn_gamma: float = 1.0
    bn_momentum: float = 0.1
    sigma_floor: float = 1e-4

    @staticmethod
    def from_dict(d):
        return ModelConfig(**d)


class Linear:
    """Affine layer y = x W + b with He-normal weight init."""

    def __init__(self, rng, n_in, n_out, name):
        scale = np.sqrt(2.0 / n_in)
        self.w = Parameter(f"{name}.w", rng.normal(0.0, scale, size=(n_in, n_out)))
        self.b = Parameter(f"{name}.b", np.zeros(n_out))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w.tensor), self.b.tensor)

    def parameters(self):
        return [self.w, self.b]


class MLP:
    """Two affine layers with a ReLU in between."""

    def __init__(self, rng, n_in, n_hidden, n_out, name):
        self.l0 = Linear(rng, n_in, n_hidden, f"{name}.l0")
        self.l1 = Linear(rng, n_hidden, n_out, f"{name}.l1")

    def __call__(self, x):
        return self.l1(ad.relu(self.l0(x)))

    def parameters(self):
        return self.l0.parameters() + self.l1.parameters()


def one_hot(y, n_classes):
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return x


class PrimoModel:
    """All learnable pieces of the latent-variable classifier."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
        c = cfg
        fused = 2 * c.encoder_dim
        self.enc_o = MLP(rng, c.x_o_dim, c.hidden_dim, c.encoder_dim, "enc_o")
        self.enc_m = MLP(rng, c.x_m_dim, c.hidden_dim, c.encoder_dim, "enc_m")
        self.prior_net = MLP(rng, fused, c.hidden_dim, 2 * c.latent_dim, "prior")
        self.post_net = MLP(rng, fused + c.n_classes, c.hidden_dim, 2 * c.latent_dim, "post")
        self.clf = MLP(rng, c.encoder_dim + c.latent_dim, c.hidden_dim, c.n_classes, "clf")
        self.bn = BatchNormState(
            c.latent_dim, gamma=c.bn_gamma, momentum=c.bn_momentum, name="post_bn"
        )

    def parameters(self):
        params = []
        for net in (self.enc_o, self.enc_m, self.prior_net, self.post_net, self.clf):
            params.extend(net.parameters())
        if self.cfg.posterior_bn:
            params.append(self.bn.beta)
        return params

    # -- forward pieces ----------------------------------------------------

    def encode_o(self, x_o):
        return self.enc_o(Tensor(_as_matrix(x_o)))

    def fuse(self, x_o, x_m=None):
        """Concatenate encoded modalities; an absent x_m contributes zeros."""
        feats_o = self.encode_o(x_o)
        if x_m is None:
            feats_m = Tensor(np.zeros((feats_o.data.shape[0], self.cfg.encoder_dim)))
        else:
            feats_m = self.enc_m(Tensor(_as_matrix(x_m)))
        return ad.concat([feats_o, feats_m], axis=1)

    def _gaussian_head(self, raw):
        d = self.cfg.latent_dim
        mu = ad.slice_cols(raw, 0, d)
        sigma = ad.add(ad.softplus(ad.slice_cols(raw, d, 2 * d)), self.cfg.sigma_floor)
        return mu, sigma

    def prior(self, x_o, x_m=None) -> DiagGaussian:
        """Conditional latent prior; pass x_m=None for the missing scenario."""
        mu, sigma = self._gaussian_head(self.prior_net(self.fuse(x_o, x_m)))
        return DiagGaussian(mu, sigma)

    def posterior(self, x_o, x_m, y, mode="train") -> DiagGaussian:
        """Label-conditioned variational posterior, mean batch-normalized."""
        y = np.asarray(y, dtype=np.int64)
        if np.any(y < 0) or np.any(y >= self.cfg.n_classes):
            raise ContractError("posterior labels out of range")
        fused = self.fuse(x_o, x_m)
        inp = ad.concat([fused, Tensor(one_hot(y, self.cfg.n_classes))], axis=1)
        mu, sigma = self._gaussian_head(self.post_net(inp))
        if self.cfg.posterior_bn:
            mu = ad.batch_norm_mean(mu, self.bn, mode)
        return DiagGaussian(mu, sigma)

    def classify(self, x_o, z) -> Tensor:
        """Raw logits from the encoded first modality and a latent sample."""
        if not isinstance(z, Tensor):
            z = Tensor(_as_matrix(z))
        if z.data.shape[1] != self.cfg.latent_dim:
            raise ad.ShapeError(
                f"latent dim {z.data.shape[1]} != configured {self.cfg.latent_dim}"
            )
        return self.clf(ad.concat([self.encode_o(x_o), z], axis=1))

    def classify_features(self, feats_o, z) -> Tensor:
        """Classifier on precomputed x_o features (hot path for MC sweeps)."""
        return self.clf(ad.concat([feats_o, z], axis=1))

    # -- persistence ---------------------------------------------------------

    def state_dict(self):
        state = {p.name: p.tensor.data.copy() for p in self.parameters()}
        state["post_bn.running_mean"] = self.bn.running_mean.copy()
        state["post_bn.running_var"] = self.bn.running_var.copy()
        if not self.cfg.posterior_bn:
            state["post_bn.beta"] = self.bn.beta.tensor.data.copy()
        return state

    def load_state_dict(self, state):
        for p in self.parameters():
            p.tensor.data = state[p.name].copy()
        self.bn.running_mean = state["post_bn.running_mean"].copy()
        self.bn.running_var = state["post_bn.running_var"].copy()

    def save(self, path):
        header = {"kind": "primo", "seed": self.seed, "model": asdict(self.cfg)}
        ad.save_arrays(path, header, self.state_dict())

    @staticmethod
    def load(path) -> "PrimoModel":
        header, arrays = ad.load_arrays(path)
        if header.get("kind") != "primo":
            raise ContractError(f"checkpoint at {path} is not a primo model")
        model = PrimoModel(ModelConfig.from_dict(header["model"]), seed=header["seed"])
        model.load_state_dict(arrays)
        return model

"""PRIMO: supervised latent-variable prediction under missing modalities.

The package trains a classifier whose latent variable stands in for a
possibly-missing second modality, predicts by Monte-Carlo marginalization
over conditional priors, and quantifies per-instance how much the missing
modality could change the prediction.
"""

from .analysis import (
    BiasReport,
    ClusterSummary,
    ImpactReport,
    PredictionSet,
    XorOracle,
    analytic_bayes_oracle_xor,
    bias_analysis,
    cluster_logits,
    ecdf,
    impact_v,
    mc_predict,
)
from .autodiff import AdamW, BatchNormState, Parameter, Tensor, no_grad
from .baselines import BaselineClassifier, train_baseline
from .data import (
    Dataset,
    DatasetSplit,
    Example,
    XorConfig,
    apply_missingness,
    generate_xor,
    load,
    save,
    split,
)
from .distributions import DiagGaussian, kl_diag_gaussian, reparam_sample, tvd
from .dpgmm import DpgmmConfig, fit_dpgmm
from .model import ModelConfig, PrimoModel
from .training import (
    LossBreakdown,
    TrainConfig,
    elbo_complete,
    elbo_missing,
    regularizer,
    train,
)

__version__ = "0.1.0"

"""Latent importance reweighting for pretrained 2-D generators.

Pretrain a WGAN-GP pair, learn non-negative latent weights ``w(z)`` against
a Wasserstein critic, then sample with latent rejection sampling or latent
gradient ascent; compare against density-ratio baselines.
"""
from .errors import ConfigError, ContractError, LatentReweightError, NumericError, StarvationError
from .models import LatentPrior, MlpParams, MlpSpec, Net, mlp_init
from .synthdata import make_dataset
from .wgan import WganConfig, gradient_penalty, pretrain
from .reweight import ReweightConfig, ReweightedPrior, effective_sample_size, importance_objective, train_importance
from .samplers import GaConfig, dot, drs, latent_ga, latent_rs, latent_rs_ga, mh, sir
from .metrics import ci_report, emd, frechet_2d, precision_recall
from .bundle import ModelBundle

__version__ = "0.1.0"

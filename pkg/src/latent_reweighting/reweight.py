"""Adversarial training of the latent importance network against a frozen generator.

The importance network ``w`` maps latent vectors to non-negative weights. A
critic estimates the Wasserstein distance between the data and the
``w``-reweighted generator output; ``w`` then maximises

    mean[w * (d - min d)] - lam_norm * (mean w - 1)^2 - lam_clip * mean(relu(w - cap)^2)

where ``d`` are critic values of generated points in the batch.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError
from .models import LatentPrior, MlpParams, MlpSpec, Net, Optimizer, build_mlp, mlp_init, param_feed, param_inputs
from .wgan import CriticObjective, WganConfig, WganTrainer, batch_sampler, check_divergence, interpolate

log = logging.getLogger(__name__)


@dataclass
class ReweightConfig:
    lam_norm: float = 10.0
    lam_clip: float = 3.0
    cap: float = 3.0
    n_critic: int = 1
    w_steps: int = 1
    batch_size: int = 256
    lr_d: float = 1e-4
    lr_w: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.9)
    gp_weight: float = 10.0
    cycles: int = 5000
    seed: int = 0
    w_hidden: Tuple[int, ...] = (64, 64, 64, 64)
    warmup_critic_steps: int = 500
    log_every: int = 50
    # divide critic-side weights by their batch mean; without it the critic
    # objective is unbounded along constant shifts of D whenever mean w != 1
    normalize_critic_weights: bool = True
    # exponential moving average of the w parameters; 0 disables it
    ema_decay: float = 0.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.w_hidden = tuple(self.w_hidden)
        if self.lam_norm < 0 or self.lam_clip < 0:
            raise ConfigError("regularisation weights must be >= 0")
        if self.cap <= 1:
            raise ConfigError("the weight cap must exceed 1")
        if self.n_critic < 1 or self.w_steps < 1:
            raise ConfigError("n_critic and w_steps must be >= 1")
        if self.batch_size < 1 or self.cycles < 0:
            raise ConfigError("batch_size must be >= 1 and cycles >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")

    def importance_spec(self, latent_dim: int) -> MlpSpec:
        return MlpSpec.make(latent_dim, self.w_hidden, 1, hidden="relu", output="relu")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(d["betas"])
        d["w_hidden"] = list(d["w_hidden"])
        return d


def importance_objective(w_vals, d_vals, lam_norm: float, lam_clip: float, cap: float) -> float:
    """The quantity ``w`` maximises, evaluated on one batch."""
    w = np.asarray(w_vals, float).ravel()
    d = np.asarray(d_vals, float).ravel()
    if len(w) == 0 or len(w) != len(d):
        raise ContractError("importance objective needs equal, non-empty batches")
    if np.any(w < 0):
        raise ContractError("importance weights must be non-negative")
    reward = np.mean(w * (d - d.min()))
    norm = (np.mean(w) - 1.0) ** 2
    clip = np.mean(np.maximum(w - cap, 0.0) ** 2)
    return float(reward - lam_norm * norm - lam_clip * clip)


def importance_objective_node(w: ad.Node, d: ad.Node, lam_norm: float, lam_clip: float, cap: float):
    """Graph version; returns (objective, reward, norm penalty, clip penalty)."""
    reward = ad.mean(w * (d - ad.fill(ad.min_(d), d)))
    norm = ad.square(ad.mean(w) - 1.0)
    clip = ad.mean(ad.square(ad.relu(w - cap)))
    return reward - lam_norm * norm - lam_clip * clip, reward, norm, clip


class ImportanceObjective:
    def __init__(self, spec: MlpSpec, config: ReweightConfig):
        g = ad.Graph()
        self.graph = g
        self.z = g.input("z")
        self.d = g.input("d")
        self.params = param_inputs(g, "w", spec)
        w = build_mlp(self.z, spec, self.params)
        self.objective, *_ = importance_objective_node(w, self.d, config.lam_norm, config.lam_clip, config.cap)
        self.grads = ad.gradients(-self.objective, self.params)

    def __call__(self, w: Net, z, d_vals):
        feed = param_feed("w", w.params)
        feed.update(z=z, d=d_vals)
        out = ad.evaluate(self.graph, feed, [self.objective, *self.grads])
        return float(out[0][0, 0]), out[1:]


def importance_init(spec: MlpSpec, seed, out_scale: float = 0.01) -> MlpParams:
    """He init with a shrunken output layer and unit output bias, so ``w`` starts near 1."""
    params = mlp_init(spec, seed)
    params.weights[-1] *= out_scale
    params.biases[-1][:] = 1.0
    return params


def effective_sample_size(weights) -> float:
    """(sum w)^2 / (n * sum w^2), in (0, 1]."""
    w = np.asarray(weights, float).ravel()
    if len(w) == 0:
        raise ContractError("ESS of an empty weight vector")
    if np.any(w < 0):
        raise ContractError("ESS needs non-negative weights")
    s2 = float(np.sum(w * w))
    if s2 == 0.0:
        raise ContractError("ESS undefined for all-zero weights")
    return float(np.sum(w) ** 2 / (len(w) * s2))


@dataclass
class ReweightTrainer:
    G: Net
    D: Net
    w: Net
    config: ReweightConfig
    rng: np.random.Generator = field(default=None)

    def __post_init__(self):
        c = self.config
        if self.rng is None:
            self.rng = np.random.default_rng(c.seed)
        self.opt_d = Optimizer(c.lr_d, c.betas)
        self.opt_w = Optimizer(c.lr_w, c.betas)
        self.critic_obj = CriticObjective(self.D.spec, c.gp_weight)
        self.w_obj = ImportanceObjective(self.w.spec, c)
        self.w_avg = self.w.copy() if c.ema_decay > 0 else None

    def critic_step(self, real: np.ndarray, z: np.ndarray) -> dict:
        fake = self.G(z)
        weights = self.w(z)
        if self.config.normalize_critic_weights:
            mean = weights.mean()
            weights = weights / mean if mean > 0 else np.ones_like(weights)
        xhat = interpolate(real, fake, self.rng)
        loss, wdist, gp, grads = self.critic_obj(self.D, real, fake, xhat, weights)
        check_divergence(loss, "weighted critic loss")
        self.D = Net(self.D.spec, self.opt_d.step(self.D.params, grads))
        return {"loss": loss, "wasserstein": wdist, "gp": gp}

    def importance_step(self, z: np.ndarray) -> float:
        d_vals = self.D(self.G(z))
        obj, grads = self.w_obj(self.w, z, d_vals)
        check_divergence(obj, "importance objective")
        self.w = Net(self.w.spec, self.opt_w.step(self.w.params, grads))
        if self.w_avg is not None:
            a = self.config.ema_decay
            for avg, cur in zip(self.w_avg.params.arrays(), self.w.params.arrays()):
                avg *= a
                avg += (1.0 - a) * cur
        return obj

    @property
    def w_final(self) -> Net:
        """The averaged network when EMA is on, else the current one."""
        return self.w_avg if self.w_avg is not None else self.w


def critic_step_weighted(D: Net, G: Net, w: Net, real, z, config: ReweightConfig, rng=None) -> Net:
    """One weighted critic ascent step from a fresh optimizer state."""
    t = ReweightTrainer(G, D, w, config, rng)
    t.critic_step(np.asarray(real, float), np.asarray(z, float))
    return t.D


def importance_step(w: Net, D: Net, G: Net, z, config: ReweightConfig) -> Net:
    t = ReweightTrainer(G, D, w, config)
    t.importance_step(np.asarray(z, float))
    return t.w


def warm_start_critic(G: Net, points: np.ndarray, prior: LatentPrior, config: ReweightConfig,
                      d_spec: Optional[MlpSpec] = None) -> Net:
    """Fresh WGAN-GP critic trained against the frozen generator."""
    wc = WganConfig(gp_weight=config.gp_weight, batch_size=max(config.batch_size, 2), lr_d=config.lr_d,
                    betas=config.betas, seed=config.seed)
    spec = d_spec or wc.critic_spec()
    D = Net(spec, mlp_init(spec, [config.seed, 7]))
    trainer = WganTrainer(G, D, wc, np.random.default_rng([config.seed, 8]))
    draw = batch_sampler(points, wc.batch_size, trainer.rng)
    for _ in range(config.warmup_critic_steps):
        trainer.critic_step(draw(), prior.sample(wc.batch_size, trainer.rng))
    return trainer.D


def weight_stats(w: Net, prior: LatentPrior, cap: float, n: int, rng: np.random.Generator) -> dict:
    vals = w(prior.sample(n, rng)).ravel()
    return {
        "mean_w": float(vals.mean()),
        "ess": effective_sample_size(vals) if vals.any() else 0.0,
        "clip_violation": float(np.mean(vals > cap)),
    }


def train_importance(G: Net, D: Optional[Net], points: np.ndarray, prior: LatentPrior,
                     config: ReweightConfig, w: Optional[Net] = None) -> Tuple[Net, Net, List[dict]]:
    """Alternate ``n_critic`` weighted critic steps with ``w_steps`` importance steps.

    ``D=None`` triggers a warm-up critic trained from scratch first. Returns
    ``(w, D, log)``, with ``w`` the parameter average when ``ema_decay > 0``; the log has the weighted Wasserstein estimate, mean
    weight, ESS and clip-violation rate every ``log_every`` cycles.
    """
    c = config
    points = np.asarray(points, float)
    if D is None:
        D = warm_start_critic(G, points, prior, c)
    if w is None:
        spec = c.importance_spec(prior.dim)
        w = Net(spec, importance_init(spec, [c.seed, 4]))
    trainer = ReweightTrainer(G, D, w, c, np.random.default_rng([c.seed, 5]))
    draw = batch_sampler(points, c.batch_size, trainer.rng)
    stat_rng = np.random.default_rng([c.seed, 6])
    history = []
    for cycle in range(c.cycles):
        for _ in range(c.n_critic):
            stats = trainer.critic_step(draw(), prior.sample(c.batch_size, trainer.rng))
        for _ in range(c.w_steps):
            obj = trainer.importance_step(prior.sample(c.batch_size, trainer.rng))
        if cycle % c.log_every == 0 or cycle == c.cycles - 1:
            entry = {"cycle": cycle, "weighted_wasserstein": stats["wasserstein"], "objective": obj}
            entry.update(weight_stats(trainer.w_final, prior, c.cap, 4096, stat_rng))
            history.append(entry)
            log.debug("reweight cycle %d: %s", cycle, entry)
    return trainer.w_final, trainer.D, history


@dataclass
class ReweightedPrior:
    """The law with density ``w`` relative to ``base``; sampled by latent rejection."""

    base: LatentPrior
    w: Net
    cap: float

    def __post_init__(self):
        if self.cap <= 0:
            raise ConfigError("cap must be positive")
        if self.w.spec.in_dim != self.base.dim:
            raise ConfigError("importance network input width differs from the prior dimension")

    def mean_weight(self, n: int, rng: np.random.Generator) -> float:
        """Monte-Carlo estimate of the total mass ``E w``; 1 for a proper law."""
        return float(self.w(self.base.sample(n, rng)).mean())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        from .samplers import latent_rs
        return latent_rs(self.w, self.base, self.cap, n, rng)[0]

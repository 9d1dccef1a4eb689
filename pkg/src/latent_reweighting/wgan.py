"""WGAN-GP pretraining of the generator/critic pair."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, NumericError
from .models import LatentPrior, MlpSpec, Net, Optimizer, build_mlp, mlp_init, param_feed, param_inputs

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3


@dataclass
class WganConfig:
    n_critic: int = 5
    gp_weight: float = 10.0
    batch_size: int = 256
    steps: int = 20000
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.9)
    seed: int = 0
    g_hidden: Tuple[int, ...] = (128, 128, 128)
    d_hidden: Tuple[int, ...] = (128, 128, 128)
    log_every: int = 50

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.g_hidden = tuple(self.g_hidden)
        self.d_hidden = tuple(self.d_hidden)
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.gp_weight < 0:
            raise ConfigError("gp_weight must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")

    def generator_spec(self, latent_dim: int) -> MlpSpec:
        return MlpSpec.make(latent_dim, self.g_hidden, 2, hidden="relu", output="identity")

    def critic_spec(self) -> MlpSpec:
        return MlpSpec.make(2, self.d_hidden, 1, hidden="leaky_relu", output="identity")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("betas", "g_hidden", "d_hidden"):
            d[k] = list(d[k])
        return d


def penalty_terms(critic_out_sum: ad.Node, xhat: ad.Node) -> ad.Node:
    """Mean of (||grad_xhat D||_2 - 1)^2 as a graph node (double-backward ready)."""
    [g] = ad.gradients(critic_out_sum, [xhat])
    return ad.mean(ad.square(ad.row_norm(g) - 1.0))


class _PenaltyGraph:
    def __init__(self, spec: MlpSpec):
        g = ad.Graph()
        self.graph = g
        self.xhat = g.input("xhat")
        params = param_inputs(g, "D", spec)
        self.gp = penalty_terms(ad.sum_(build_mlp(self.xhat, spec, params)), self.xhat)


_penalty_graphs: dict = {}


def interpolate(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if real.shape != fake.shape:
        raise ContractError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    u = rng.uniform(size=(len(real), 1))
    return u * real + (1.0 - u) * fake


def gradient_penalty(D: Net, real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> float:
    """Two-sided penalty at random interpolates; the coefficient is applied by callers."""
    xhat = interpolate(real, fake, rng)
    pg = _penalty_graphs.get(D.spec)
    if pg is None:
        pg = _penalty_graphs[D.spec] = _PenaltyGraph(D.spec)
    feed = param_feed("D", D.params)
    feed["xhat"] = xhat
    return float(ad.eval_node(pg.graph, feed, pg.gp)[0, 0])


class CriticObjective:
    """Loss = -(mean D(real) - mean(w * D(fake))) + gp_weight * GP(xhat).

    Plain WGAN-GP passes ``w = 1``. Gradients are with respect to the critic
    parameters and flow through the input-gradient inside the penalty.
    """

    def __init__(self, spec: MlpSpec, gp_weight: float):
        g = ad.Graph()
        self.graph = g
        self.real = g.input("real")
        self.fake = g.input("fake")
        self.xhat = g.input("xhat")
        self.weights = g.input("weights")
        self.params = param_inputs(g, "D", spec)
        d_real = build_mlp(self.real, spec, self.params)
        d_fake = build_mlp(self.fake, spec, self.params)
        d_hat = build_mlp(self.xhat, spec, self.params)
        self.wasserstein = ad.mean(d_real) - ad.mean(self.weights * d_fake)
        self.gp = penalty_terms(ad.sum_(d_hat), self.xhat)
        self.loss = -self.wasserstein + gp_weight * self.gp if gp_weight else -self.wasserstein
        self.grads = ad.gradients(self.loss, self.params)

    def __call__(self, D: Net, real, fake, xhat, weights=None):
        feed = param_feed("D", D.params)
        feed.update(real=real, fake=fake, xhat=xhat)
        feed["weights"] = np.ones((len(fake), 1)) if weights is None else weights
        out = ad.evaluate(self.graph, feed, [self.loss, self.wasserstein, self.gp, *self.grads])
        return float(out[0][0, 0]), float(out[1][0, 0]), float(out[2][0, 0]), out[3:]


class GeneratorObjective:
    """Loss = -mean D(G(z)); gradients with respect to the generator parameters."""

    def __init__(self, g_spec: MlpSpec, d_spec: MlpSpec):
        g = ad.Graph()
        self.graph = g
        self.z = g.input("z")
        self.g_params = param_inputs(g, "G", g_spec)
        d_params = param_inputs(g, "D", d_spec)
        self.loss = -ad.mean(build_mlp(build_mlp(self.z, g_spec, self.g_params), d_spec, d_params))
        self.grads = ad.gradients(self.loss, self.g_params)

    def __call__(self, G: Net, D: Net, z):
        feed = param_feed("G", G.params)
        feed.update(param_feed("D", D.params))
        feed["z"] = z
        out = ad.evaluate(self.graph, feed, [self.loss, *self.grads])
        return float(out[0][0, 0]), out[1:]


def check_divergence(value: float, what: str) -> None:
    if not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        raise NumericError(f"{what} diverged: {value!r} exceeds {DIVERGENCE_LIMIT:g} in magnitude")


@dataclass
class WganTrainer:
    """Holds the networks, optimizer states and RNG for alternating updates."""

    G: Net
    D: Net
    config: WganConfig
    rng: np.random.Generator = field(default=None)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        c = self.config
        self.opt_d = Optimizer(c.lr_d, c.betas)
        self.opt_g = Optimizer(c.lr_g, c.betas)
        self.critic_obj = CriticObjective(self.D.spec, c.gp_weight)
        self.gen_obj = GeneratorObjective(self.G.spec, self.D.spec)

    def critic_step(self, real: np.ndarray, z: np.ndarray) -> dict:
        fake = self.G(z)
        xhat = interpolate(real, fake, self.rng)
        loss, wdist, gp, grads = self.critic_obj(self.D, real, fake, xhat)
        check_divergence(loss, "critic loss")
        self.D = Net(self.D.spec, self.opt_d.step(self.D.params, grads))
        return {"loss": loss, "wasserstein": wdist, "gp": gp}

    def generator_step(self, z: np.ndarray) -> float:
        loss, grads = self.gen_obj(self.G, self.D, z)
        check_divergence(loss, "generator loss")
        self.G = Net(self.G.spec, self.opt_g.step(self.G.params, grads))
        return loss


def critic_step(D: Net, G: Net, real, z, config: WganConfig, rng=None, opt: Optional[Optimizer] = None) -> Net:
    """Single ascent step on the WGAN-GP critic objective (fresh Adam state unless ``opt``)."""
    trainer = WganTrainer(G, D, config, rng or np.random.default_rng(config.seed))
    if opt is not None:
        trainer.opt_d = opt
    trainer.critic_step(np.asarray(real, float), np.asarray(z, float))
    return trainer.D


def generator_step(G: Net, D: Net, z, config: WganConfig, opt: Optional[Optimizer] = None) -> Net:
    trainer = WganTrainer(G, D, config)
    if opt is not None:
        trainer.opt_g = opt
    trainer.generator_step(np.asarray(z, float))
    return trainer.G


def batch_sampler(points: np.ndarray, batch_size: int, rng: np.random.Generator):
    def draw():
        return points[rng.integers(len(points), size=batch_size)]
    return draw


def pretrain(points: np.ndarray, prior: LatentPrior, config: WganConfig,
             G: Optional[Net] = None, D: Optional[Net] = None) -> Tuple[Net, Net, List[dict]]:
    """Alternate ``n_critic`` critic updates with one generator update.

    ``G``/``D`` warm-start the networks; otherwise they are initialised from
    the config seed. Returns the trained pair and a JSON-ready log.
    """
    c = config
    if G is None:
        G = Net(c.generator_spec(prior.dim), mlp_init(c.generator_spec(prior.dim), [c.seed, 1]))
    if D is None:
        D = Net(c.critic_spec(), mlp_init(c.critic_spec(), [c.seed, 2]))
    if G.spec.in_dim != prior.dim:
        raise ConfigError("generator input width does not match the prior dimension")
    trainer = WganTrainer(G, D, c, np.random.default_rng([c.seed, 3]))
    draw_real = batch_sampler(np.asarray(points, float), c.batch_size, trainer.rng)
    history = []
    for step in range(c.steps):
        for _ in range(c.n_critic):
            stats = trainer.critic_step(draw_real(), prior.sample(c.batch_size, trainer.rng))
        g_loss = trainer.generator_step(prior.sample(c.batch_size, trainer.rng))
        if step % c.log_every == 0 or step == c.steps - 1:
            history.append({"step": step, "critic_objective": stats["wasserstein"], "gp": stats["gp"],
                            "generator_loss": g_loss})
            log.debug("wgan step %d: W=%.4f gp=%.4f", step, stats["wasserstein"], stats["gp"])
    return trainer.G, trainer.D, history

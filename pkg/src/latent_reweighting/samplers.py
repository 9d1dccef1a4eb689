"""Post-hoc samplers for a trained generator.

Latent-space methods use the importance network ``w``:
``latent_rs`` (rejection with acceptance ``w(z) / cap``), ``latent_ga``
(gradient ascent on ``w``) and ``latent_rs_ga`` (both in sequence).

Baselines work with a density ratio ``r(x)`` estimated by a classifier:
``drs`` (rejection), ``sir`` (importance resampling), ``mh`` (independent
Metropolis-Hastings), plus ``dot`` (latent ascent on the critic).

All samplers are vectorised: they return ``n`` samples at once and consume
randomness only from the ``rng`` they are handed. Functions passed in as
``weight_fn``/``ratio_fn``/``generator`` map an ``(n, dim)`` array to ``n``
values (any shape that ravels to ``n``) or to points.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, NumericError, StarvationError
from .models import LatentPrior, MlpSpec, Net, Optimizer, build_mlp, param_feed, param_inputs
from .wgan import batch_sampler, check_divergence, interpolate, penalty_terms

ArrayFn = Callable[[np.ndarray], np.ndarray]

MAX_DRAWS_PER_SAMPLE = 10_000
RATIO_CLAMP = 1e-6
MH_REDRAWS = 100


@dataclass
class GaConfig:
    steps: int = 10
    step_size: float = 0.05
    project: bool = False
    # divide by |z|^2 (an orthogonal projection) instead of sqrt(d)
    exact_projection: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("gradient ascent steps must be >= 0")
        if self.step_size <= 0:
            raise ConfigError("gradient ascent step size must be > 0")


def project_gradient(g: np.ndarray, z: np.ndarray, exact: bool = False) -> np.ndarray:
    """Row-wise ``g - (g . z) z / sqrt(d)`` (or ``/ |z|^2`` when ``exact``)."""
    dots = np.sum(g * z, axis=1, keepdims=True)
    if exact:
        sq = np.sum(z * z, axis=1, keepdims=True)
        scale = np.divide(dots, sq, out=np.zeros_like(dots), where=sq > 0)
    else:
        scale = dots / np.sqrt(z.shape[1])
    return g - scale * z


def _values(fn: ArrayFn, x: np.ndarray) -> np.ndarray:
    return np.asarray(fn(x), float).ravel()


# --------------------------------------------------------------------------
# latent samplers

def _rejection(propose: Callable[[int], np.ndarray], accept_prob: ArrayFn, n: int,
               rng: np.random.Generator, batch_hint: float, max_draws: int) -> Tuple[np.ndarray, int]:
    """Collect ``n`` accepted proposals; returns them with the exact draw count.

    Proposals are screened in blocks, but only the draws a sequential
    sampler would have consumed are counted.
    """
    budget = max_draws * max(n, 1)
    kept, got, draws = [], 0, 0
    while got < n:
        remaining = budget - draws
        if remaining <= 0:
            raise StarvationError(f"accepted {got}/{n} samples after {draws} draws")
        k = int(min(remaining, max(64, (n - got) * batch_hint * 1.2 + 16)))
        cand = propose(k)
        hit = np.flatnonzero(accept_prob(cand) >= rng.uniform(size=k))
        need = n - got
        if len(hit) >= need:
            kept.append(cand[hit[:need]])
            draws += int(hit[need - 1]) + 1
            got = n
        else:
            kept.append(cand[hit])
            draws += k
            got += len(hit)
    if not kept:
        return propose(0), draws
    return np.concatenate(kept), draws


def latent_rs(weight_fn: ArrayFn, prior: LatentPrior, cap: float, n: int, rng: np.random.Generator,
              max_draws: int = MAX_DRAWS_PER_SAMPLE) -> Tuple[np.ndarray, int]:
    """Latent rejection sampling: keep ``z ~ prior`` when ``w(z) / cap >= u``.

    Returns ``(z, draws)``; ``n / draws`` is the empirical acceptance rate.
    Raises StarvationError after ``max_draws`` proposals per requested sample.
    """
    if cap <= 0:
        raise ConfigError("cap must be positive")
    return _rejection(lambda k: prior.sample(k, rng), lambda z: _values(weight_fn, z) / cap,
                      n, rng, cap, max_draws)


def latent_ga(grad_fn: ArrayFn, z0: np.ndarray, cfg: GaConfig, gaussian_prior: bool = True) -> np.ndarray:
    """``cfg.steps`` ascent steps ``z <- z + eps * grad``; projection only for Gaussian priors."""
    z = np.array(z0, dtype=float, copy=True)
    for _ in range(cfg.steps):
        g = np.asarray(grad_fn(z), float).reshape(z.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite latent gradient")
        if cfg.project and gaussian_prior:
            g = project_gradient(g, z, cfg.exact_projection)
        z = z + cfg.step_size * g
    return z


def latent_rs_ga(w: Net, prior: LatentPrior, cap: float, cfg: GaConfig, n: int, rng: np.random.Generator,
                 max_draws: int = MAX_DRAWS_PER_SAMPLE) -> Tuple[np.ndarray, int]:
    z, draws = latent_rs(w, prior, cap, n, rng, max_draws)
    return latent_ga(w.input_gradient, z, cfg, prior.kind == "gaussian"), draws


# --------------------------------------------------------------------------
# density-ratio baselines

def density_ratio(p) -> np.ndarray:
    """``p / (1 - p)`` with ``p`` clamped to at most ``1 - 1e-6``."""
    p = np.minimum(np.asarray(p, float), 1.0 - RATIO_CLAMP)
    if np.any(p < 0):
        raise ContractError("classifier probabilities must be non-negative")
    return p / (1.0 - p)


@dataclass
class RatioModel:
    """Real-vs-fake classifier; ``prob`` is the sigmoid of the critic-shaped logit net."""

    net: Net

    def logits(self, x) -> np.ndarray:
        return self.net(x).ravel()

    def prob(self, x) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.logits(x)))

    def __call__(self, x) -> np.ndarray:
        return density_ratio(self.prob(x))


class BceObjective:
    """Binary cross-entropy (real = 1) on logits, plus the gradient penalty."""

    def __init__(self, spec: MlpSpec, gp_weight: float):
        g = ad.Graph()
        self.graph = g
        real, fake, xhat = g.input("real"), g.input("fake"), g.input("xhat")
        self.params = param_inputs(g, "D", spec)
        l_real = build_mlp(real, spec, self.params)
        l_fake = build_mlp(fake, spec, self.params)
        bce = ad.mean(ad.softplus(-l_real)) + ad.mean(ad.softplus(l_fake))
        self.loss = bce + gp_weight * penalty_terms(ad.sum_(build_mlp(xhat, spec, self.params)), xhat) if gp_weight else bce
        self.bce = bce
        self.grads = ad.gradients(self.loss, self.params)

    def __call__(self, D: Net, real, fake, xhat):
        feed = param_feed("D", D.params)
        feed.update(real=real, fake=fake, xhat=xhat)
        out = ad.evaluate(self.graph, feed, [self.loss, *self.grads])
        return float(out[0][0, 0]), out[1:]


def finetune_bce(D: Net, G: Net, points: np.ndarray, prior: LatentPrior, steps: int, rng: np.random.Generator,
                 batch_size: int = 256, lr: float = 1e-4, betas=(0.5, 0.9), gp_weight: float = 10.0) -> RatioModel:
    """Turn a critic into a real-vs-fake classifier by BCE fine-tuning (penalty kept)."""
    net = D.copy()
    if steps <= 0:
        return RatioModel(net)
    obj = BceObjective(net.spec, gp_weight)
    opt = Optimizer(lr, tuple(betas))
    draw = batch_sampler(np.asarray(points, float), batch_size, rng)
    for _ in range(steps):
        real = draw()
        fake = G(prior.sample(batch_size, rng))
        loss, grads = obj(net, real, fake, interpolate(real, fake, rng))
        check_divergence(loss, "BCE fine-tuning loss")
        net = Net(net.spec, opt.step(net.params, grads))
    return RatioModel(net)


def calibrate_k(ratio_fn: ArrayFn, generator: ArrayFn, prior: LatentPrior, rng: np.random.Generator,
                n: int = 10_000) -> float:
    """Largest ratio over a calibration batch of generated points."""
    k = float(np.max(_values(ratio_fn, generator(prior.sample(n, rng)))))
    if k <= 0:
        raise NumericError("all calibration ratios are zero")
    return k


def drs(ratio_fn: ArrayFn, generator: ArrayFn, prior: LatentPrior, k: float, n: int, rng: np.random.Generator,
        max_draws: int = MAX_DRAWS_PER_SAMPLE) -> Tuple[np.ndarray, int]:
    """Rejection sampling in data space with acceptance ``min(1, r(x) / k)``."""
    if k <= 0:
        raise ConfigError("k must be positive")
    return _rejection(lambda m: generator(prior.sample(m, rng)),
                      lambda x: np.minimum(_values(ratio_fn, x) / k, 1.0),
                      n, rng, min(k, 1000.0), max_draws)


def sir(ratio_fn: ArrayFn, generator: ArrayFn, prior: LatentPrior, N: int, n: int,
        rng: np.random.Generator) -> np.ndarray:
    """Each output is one of ``N`` fresh candidates picked with probability ``r / sum r``."""
    if N < 1:
        raise ConfigError("SIR needs N >= 1")
    cand = generator(prior.sample(n * N, rng))
    cand = np.asarray(cand, float).reshape(n, N, -1)
    r = _values(ratio_fn, cand.reshape(n * N, -1)).reshape(n, N)
    tot = r.sum(axis=1)
    if np.any(tot <= 0):
        raise NumericError("degenerate SIR batch: every candidate has ratio 0")
    cdf = np.cumsum(r, axis=1) / tot[:, None]
    pick = (cdf < rng.uniform(size=(n, 1))).sum(axis=1)
    pick = np.minimum(pick, N - 1)
    return cand[np.arange(n), pick]


def mh(ratio_fn: ArrayFn, generator: ArrayFn, prior: LatentPrior, chain_len: int, n: int,
       rng: np.random.Generator) -> np.ndarray:
    """``n`` independent MH chains with proposals from the generator; returns final states."""
    if chain_len < 1:
        raise ConfigError("chain length must be >= 1")
    x = np.asarray(generator(prior.sample(n, rng)), float)
    r = _values(ratio_fn, x)
    for _ in range(MH_REDRAWS):
        dead = r <= 0
        if not dead.any():
            break
        x[dead] = generator(prior.sample(int(dead.sum()), rng))
        r[dead] = _values(ratio_fn, x[dead])
    else:
        if np.any(r <= 0):
            raise StarvationError(f"MH start state has ratio 0 after {MH_REDRAWS} redraws")
    for _ in range(chain_len - 1):
        xp = np.asarray(generator(prior.sample(n, rng)), float)
        rp = _values(ratio_fn, xp)
        take = rng.uniform(size=n) * r <= rp
        x[take] = xp[take]
        r[take] = rp[take]
    return x


class _LatentCriticGraph:
    def __init__(self, g_spec: MlpSpec, d_spec: MlpSpec):
        g = ad.Graph()
        self.graph = g
        self.z = g.input("z")
        gp = param_inputs(g, "G", g_spec)
        dp = param_inputs(g, "D", d_spec)
        out = build_mlp(build_mlp(self.z, g_spec, gp), d_spec, dp)
        self.grad = ad.gradients(ad.sum_(out), [self.z])[0]


@functools.lru_cache(maxsize=None)
def _latent_critic_graph(g_spec: MlpSpec, d_spec: MlpSpec) -> _LatentCriticGraph:
    return _LatentCriticGraph(g_spec, d_spec)


def latent_critic_gradient(G: Net, D: Net) -> ArrayFn:
    """``z -> grad_z D(G(z))`` row-wise."""
    lg = _latent_critic_graph(G.spec, D.spec)
    feed = param_feed("G", G.params)
    feed.update(param_feed("D", D.params))

    def grad(z):
        return ad.eval_node(lg.graph, {**feed, "z": ad.as_tensor(z, "z")}, lg.grad)
    return grad


def dot(G: Net, D: Net, z0: np.ndarray, cfg: GaConfig, gaussian_prior: bool = True) -> np.ndarray:
    """Latent ascent on the critic value of generated points; returns ``G(z_final)``."""
    z = latent_ga(latent_critic_gradient(G, D), z0, cfg, gaussian_prior)
    return G(z)

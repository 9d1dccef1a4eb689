"""Stage orchestration shared by the command-line driver and the experiments.

A run config is a JSON object::

    {"seed": 0,
     "dataset": {"name": "swiss_roll", "n": 20000, "params": {}},
     "prior": {"kind": "gaussian", "dim": 2},
     "wgan": {...WganConfig fields...},
     "reweight": {...ReweightConfig fields...},
     "ga": {...GaConfig fields...},
     "dot": {...GaConfig fields...},
     "samplers": {"sir_candidates": 10, "mh_chain_len": 10, ...},
     "eval": {"n": 1024, "repeats": 10, "k": 3}}

Every section is optional; missing fields take the dataclass defaults.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .bundle import ModelBundle
from .errors import ConfigError
from .metrics import MetricsReport, MetricSummary, evaluate_sets
from .models import LatentPrior, Net
from .reweight import ReweightConfig, effective_sample_size, train_importance
from .samplers import (GaConfig, RatioModel, calibrate_k, dot, drs, finetune_bce, latent_ga, latent_rs,
                       latent_rs_ga, mh, sir)
from .synthdata import DATASETS, make_dataset
from .wgan import WganConfig, pretrain

log = logging.getLogger(__name__)

METHODS = ("none", "latentrs", "latentga", "latentrs-ga", "drs", "sir", "mh", "dot")


@dataclass
class DatasetSpec:
    name: str = "swiss_roll"
    n: int = 20000
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigError(f"unknown dataset {self.name!r}; choose from {sorted(DATASETS)}")
        if self.n < 1:
            raise ConfigError("dataset size must be >= 1")

    def sample(self, n: int, seed) -> np.ndarray:
        return make_dataset(self.name, n, seed, **self.params).points


@dataclass
class SamplerConfig:
    sir_candidates: int = 10
    mh_chain_len: int = 10
    drs_calibration: int = 10_000
    bce_steps: int = 500
    bce_lr: float = 1e-4
    bce_gp_weight: float = 10.0
    max_draws: int = 10_000

    def __post_init__(self):
        if min(self.sir_candidates, self.mh_chain_len, self.drs_calibration, self.max_draws) < 1:
            raise ConfigError("sampler counts must be >= 1")
        if self.bce_steps < 0:
            raise ConfigError("bce_steps must be >= 0")


@dataclass
class EvalConfig:
    n: int = 1024
    repeats: int = 10
    k: int = 3

    def __post_init__(self):
        if self.n <= self.k or self.repeats < 1 or self.k < 1:
            raise ConfigError("eval needs n > k >= 1 and repeats >= 1")


def _section(cls, d: Optional[dict], name: str):
    d = dict(d or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"[{name}] unknown field(s) {unknown}; allowed: {sorted(known)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    prior: LatentPrior = field(default_factory=LatentPrior)
    wgan: WganConfig = field(default_factory=WganConfig)
    reweight: ReweightConfig = field(default_factory=ReweightConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    dot: GaConfig = field(default_factory=lambda: GaConfig(steps=10, step_size=0.01))
    samplers: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = {"dataset": DatasetSpec, "prior": LatentPrior, "wgan": WganConfig, "reweight": ReweightConfig,
                "ga": GaConfig, "dot": GaConfig, "samplers": SamplerConfig, "eval": EvalConfig}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(d) - set(cls.SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config section(s) {unknown}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        kw = {name: _section(sec, d.get(name), name) for name, sec in cls.SECTIONS.items() if name in d}
        cfg = cls(seed=seed, **kw)
        # stage seeds follow the master seed unless set explicitly
        if "seed" not in (d.get("wgan") or {}):
            cfg.wgan.seed = seed
        if "seed" not in (d.get("reweight") or {}):
            cfg.reweight.seed = seed
        return cfg

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in self.SECTIONS:
            v = getattr(self, name)
            out[name] = v.to_dict() if hasattr(v, "to_dict") else asdict(v)
        return out


# --------------------------------------------------------------------------
# 2-D preset used by the experiments and tests: lower penalty weights and
# faster rates than the large-model defaults (see README).

def toy_wgan_config(seed: int = 0, steps: int = 1000) -> WganConfig:
    return WganConfig(steps=steps, gp_weight=0.1, g_hidden=(64, 64, 64), d_hidden=(64, 64, 64), seed=seed)


def toy_reweight_config(seed: int = 0, cycles: int = 8000, **kw) -> ReweightConfig:
    base = dict(gp_weight=1.0, lr_d=3e-3, lr_w=3e-3, cycles=cycles, ema_decay=0.999, seed=seed)
    base.update(kw)
    return ReweightConfig(**base)


# --------------------------------------------------------------------------
# stages

def stage_pretrain(cfg: RunConfig) -> ModelBundle:
    points = cfg.dataset.sample(cfg.dataset.n, cfg.seed)
    G, D, history = pretrain(points, cfg.prior, cfg.wgan)
    bundle = ModelBundle(cfg.prior, cfg.seed, configs={"dataset": asdict(cfg.dataset)})
    return bundle.with_stage("pretrain", {"G": G, "D": D}, cfg.wgan.to_dict(), history)


def stage_reweight(bundle: ModelBundle, cfg: RunConfig, reuse_critic: bool = True) -> ModelBundle:
    G = bundle.net("G")
    D = bundle.networks.get("D") if reuse_critic else None
    points = cfg.dataset.sample(cfg.dataset.n, cfg.seed)
    w, _, history = train_importance(G, D, points, bundle.prior, cfg.reweight)
    rng = np.random.default_rng([cfg.reweight.seed, 11])
    vals = w(bundle.prior.sample(100_000, rng)).ravel()
    summary = {"mean_w": float(vals.mean()),
               "ess": effective_sample_size(vals) if vals.any() else 0.0,
               "clip_violation": float(np.mean(vals > 1.1 * cfg.reweight.cap))}
    history = history + [{"summary": summary}]
    return bundle.with_stage("reweight", {"w": w}, cfg.reweight.to_dict(), history,
                             critic="pretrained" if D is not None else "fresh", **summary)


def ensure_ratio(bundle: ModelBundle, cfg: RunConfig) -> ModelBundle:
    """Add a BCE-fine-tuned classifier unless the bundle already has one."""
    if bundle.has("ratio"):
        return bundle
    s = cfg.samplers
    points = cfg.dataset.sample(cfg.dataset.n, cfg.seed)
    rm = finetune_bce(bundle.net("D"), bundle.net("G"), points, bundle.prior, s.bce_steps,
                      np.random.default_rng([cfg.seed, 21]), lr=s.bce_lr, gp_weight=s.bce_gp_weight)
    conf = {"steps": s.bce_steps, "lr": s.bce_lr, "gp_weight": s.bce_gp_weight}
    return bundle.with_stage("ratio", {"ratio": rm.net}, conf)


def required_networks(method: str) -> Tuple[str, ...]:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {list(METHODS)}")
    return {"none": ("G",), "latentrs": ("G", "w"), "latentga": ("G", "w"), "latentrs-ga": ("G", "w"),
            "drs": ("G", "ratio"), "sir": ("G", "ratio"), "mh": ("G", "ratio"), "dot": ("G", "D")}[method]


@dataclass
class SampleResult:
    points: np.ndarray
    method: str
    wall_time_us: float  # per returned sample
    draws: Optional[int] = None

    @property
    def acceptance_rate(self) -> Optional[float]:
        if self.draws is None or self.draws == 0:
            return None
        return len(self.points) / self.draws


def draw_samples(bundle: ModelBundle, method: str, n: int, rng: np.random.Generator, cfg: RunConfig) -> SampleResult:
    """``n`` samples with ``method``; every needed network must already be in the bundle."""
    for role in required_networks(method):
        bundle.net(role)
    if n < 0:
        raise ConfigError("sample count must be >= 0")
    prior, G = bundle.prior, bundle.net("G")
    cap = cfg.reweight.cap
    gaussian = prior.kind == "gaussian"
    s = cfg.samplers
    draws = None
    t0 = time.perf_counter()
    if n == 0:
        pts = np.zeros((0, 2))
    elif method == "none":
        pts = G(prior.sample(n, rng))
    elif method == "latentrs":
        z, draws = latent_rs(bundle.net("w"), prior, cap, n, rng, s.max_draws)
        pts = G(z)
    elif method == "latentga":
        pts = G(latent_ga(bundle.net("w").input_gradient, prior.sample(n, rng), cfg.ga, gaussian))
    elif method == "latentrs-ga":
        z, draws = latent_rs_ga(bundle.net("w"), prior, cap, cfg.ga, n, rng, s.max_draws)
        pts = G(z)
    elif method == "dot":
        pts = dot(G, bundle.net("D"), prior.sample(n, rng), cfg.dot, gaussian)
    else:
        ratio = RatioModel(bundle.net("ratio"))
        if method == "drs":
            k = calibrate_k(ratio, G, prior, rng, s.drs_calibration)
            pts, draws = drs(ratio, G, prior, k, n, rng, s.max_draws)
        elif method == "sir":
            pts = sir(ratio, G, prior, s.sir_candidates, n, rng)
        else:
            pts = mh(ratio, G, prior, s.mh_chain_len, n, rng)
    elapsed = time.perf_counter() - t0
    per = elapsed * 1e6 / n if n else 0.0
    return SampleResult(np.asarray(pts, float).reshape(-1, 2), method, per, draws)


def evaluate_method(bundle: ModelBundle, method: str, cfg: RunConfig, seed: int) -> MetricsReport:
    """Metrics over ``cfg.eval.repeats`` fresh (real, generated) set pairs."""
    e = cfg.eval
    reals, fakes, times, rates = [], [], [], []
    rng = np.random.default_rng([seed, 31, METHODS.index(method)])
    for r in range(e.repeats):
        reals.append(cfg.dataset.sample(e.n, [seed, 1000 + r]))
        res = draw_samples(bundle, method, e.n, rng, cfg)
        fakes.append(res.points)
        times.append(res.wall_time_us)
        if res.acceptance_rate is not None:
            rates.append(res.acceptance_rate)
    report = evaluate_sets(reals, fakes, e.k)
    report.wall_time_us = MetricSummary.from_values("wall_time_us", times)
    if rates:
        report.acceptance_rate = float(np.mean(rates))
    if method in ("latentrs", "latentrs-ga", "latentga"):
        vals = bundle.net("w")(bundle.prior.sample(10_000, rng)).ravel()
        report.ess = effective_sample_size(vals) if vals.any() else 0.0
    return report


def evaluate_methods(bundle: ModelBundle, methods: List[str], cfg: RunConfig, seed: int) -> Dict[str, MetricsReport]:
    if any(required_networks(m) and "ratio" in required_networks(m) for m in methods):
        bundle = ensure_ratio(bundle, cfg)
    return {m: evaluate_method(bundle, m, cfg, seed) for m in methods}

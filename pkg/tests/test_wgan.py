import numpy as np
import pytest

from latent_reweighting.errors import ContractError, NumericError
from latent_reweighting.metrics import emd
from latent_reweighting.models import LatentPrior, MlpParams, MlpSpec, Net
from latent_reweighting.pipeline import toy_wgan_config
from latent_reweighting.synthdata import make_dataset, sample_gaussian_grid
from latent_reweighting.wgan import (CriticObjective, WganConfig, check_divergence, critic_step, generator_step,
                                     gradient_penalty, pretrain)

from conftest import random_net


def linear_critic(v, hidden_width=2):
    # leaky-relu(a) - leaky-relu(-a) = (1 + slope) a, rescaled to v . x
    spec = MlpSpec((2, 2, 1), hidden="leaky_relu")
    W0 = np.stack([v, -v], axis=1)
    W1 = np.array([[1.0], [-1.0]]) / 1.2
    return Net(spec, MlpParams([W0, W1], [np.zeros((1, 2)), np.zeros((1, 1))]))


def test_penalty_of_unit_linear_critic_is_zero(rng):
    D = linear_critic(np.array([0.6, 0.8]))
    x = rng.standard_normal((64, 2))
    assert np.allclose(D(x).ravel(), x @ np.array([0.6, 0.8]))
    assert gradient_penalty(D, x, rng.standard_normal((64, 2)), rng) == pytest.approx(0.0, abs=1e-24)


def test_penalty_of_zero_critic_is_one(rng):
    spec = MlpSpec((2, 4, 1), hidden="leaky_relu")
    D = Net(spec, MlpParams([np.zeros((2, 4)), np.zeros((4, 1))], [np.zeros((1, 4)), np.zeros((1, 1))]))
    x = rng.standard_normal((16, 2))
    # the row norm carries a 1e-12 stabiliser under the square root
    assert gradient_penalty(D, x, x + 1, rng) == pytest.approx(1.0, abs=1e-5)


def test_penalty_matches_numeric_gradient_oracle():
    D = random_net((2, 8, 8, 1), 11, bias_scale=0.3)
    r = np.random.default_rng(0)
    real, fake = r.standard_normal((32, 2)), r.standard_normal((32, 2))
    value = gradient_penalty(D, real, fake, np.random.default_rng(5))
    u = np.random.default_rng(5).uniform(size=(32, 1))
    xhat = u * real + (1 - u) * fake
    h = 1e-6
    g = np.stack([(D(xhat + h * e) - D(xhat - h * e)).ravel() / (2 * h) for e in np.eye(2)], axis=1)
    oracle = np.mean((np.linalg.norm(g, axis=1) - 1) ** 2)
    assert abs(value - oracle) / oracle <= 1e-6


def test_penalty_batch_mismatch(rng):
    D = random_net((2, 4, 1), 0)
    with pytest.raises(ContractError):
        gradient_penalty(D, np.zeros((3, 2)), np.zeros((4, 2)), rng)


def test_critic_objective_is_mean_difference_without_penalty(rng):
    D = linear_critic(np.array([1.0, 0.0]))
    obj = CriticObjective(D.spec, 0.0)
    real, fake = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
    _, wdist, _, _ = obj(D, real, fake, real)
    assert wdist == pytest.approx(real[:, 0].mean() - fake[:, 0].mean(), abs=1e-14)


def test_critic_step_sign_matches_hand_gradient():
    # one-parameter critic D(x) = a * x1 (through the linear construction) on data right of the fakes
    cfg = WganConfig(gp_weight=0.0, lr_d=1e-3, seed=0)
    D = linear_critic(np.array([0.5, 0.0]))
    G = Net(MlpSpec((2, 2, 2), hidden="relu"),
            MlpParams([np.zeros((2, 2)), np.zeros((2, 2))], [np.zeros((1, 2)), np.zeros((1, 2))]))
    real = np.tile([[2.0, 0.0]], (8, 1))
    z = np.zeros((8, 2))
    D2 = critic_step(D, G, real, z, cfg)
    # ascent on mean D(real) - mean D(fake) = 2 a pushes a (the x1 slope) up
    slope = lambda net: float(net(np.array([[1.0, 0.0]]))[0, 0] - net(np.zeros((1, 2)))[0, 0])
    assert slope(D2) > slope(D)


def test_generator_step_sign_matches_hand_gradient():
    # D(x) = x1: minimising -mean D(G(z)) moves generated points right
    cfg = WganConfig(lr_g=1e-3)
    D = linear_critic(np.array([1.0, 0.0]))
    G = random_net((2, 8, 2), 3, hidden="relu", bias_scale=0.5)
    z = np.random.default_rng(0).standard_normal((64, 2))
    G2 = generator_step(G, D, z, cfg)
    assert G2(z)[:, 0].mean() > G(z)[:, 0].mean()


def test_zero_learning_rate_is_noop(rng):
    G = random_net((2, 8, 2), 1, hidden="relu")
    D = random_net((2, 8, 1), 2)
    cfg = WganConfig(lr_d=0.0, lr_g=0.0)
    real, z = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
    assert critic_step(D, G, real, z, cfg).params.equals(D.params)
    assert generator_step(G, D, z, cfg).params.equals(G.params)


def test_steps_are_deterministic(rng):
    G = random_net((2, 8, 2), 1, hidden="relu")
    D = random_net((2, 8, 1), 2)
    cfg = WganConfig()
    real, z = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
    a = critic_step(D, G, real, z, cfg, np.random.default_rng(0))
    b = critic_step(D, G, real, z, cfg, np.random.default_rng(0))
    assert a.params.equals(b.params)


def test_pretrain_zero_steps_returns_initial_networks():
    pts = make_dataset("swiss_roll", 512, 0).points
    cfg = WganConfig(steps=0, g_hidden=(8,), d_hidden=(8,))
    G, D, log = pretrain(pts, LatentPrior(), cfg)
    G0, D0, _ = pretrain(pts, LatentPrior(), cfg)
    assert G.params.equals(G0.params) and D.params.equals(D0.params) and log == []


def test_pretrain_reproducible():
    pts = make_dataset("swiss_roll", 512, 0).points
    cfg = WganConfig(steps=5, batch_size=32, g_hidden=(8, 8), d_hidden=(8, 8), seed=3)
    a = pretrain(pts, LatentPrior(), cfg)
    b = pretrain(pts, LatentPrior(), cfg)
    assert a[0].params.equals(b[0].params) and a[1].params.equals(b[1].params)
    assert a[2] == b[2]
    assert set(a[2][0]) == {"step", "critic_objective", "gp", "generator_loss"}


def test_pretrain_single_gaussian_reduces_emd():
    pts = sample_gaussian_grid(4096, rows=1, cols=1, std=0.05, seed=0).points + np.array([0.7, -0.4])
    prior = LatentPrior()
    cfg = WganConfig(steps=200, gp_weight=0.1, lr_g=1e-3, lr_d=1e-3, g_hidden=(32, 32), d_hidden=(32, 32), seed=0, batch_size=128)
    G0, _, _ = pretrain(pts, prior, WganConfig(steps=0, g_hidden=(32, 32), d_hidden=(32, 32), seed=0))
    G, _, _ = pretrain(pts, prior, cfg)
    r = np.random.default_rng(1)
    real = pts[:512]
    before = emd(real, G0(prior.sample(512, r)))
    after = emd(real, G(prior.sample(512, r)))
    assert after < 0.5 * before


def test_divergence_guard():
    with pytest.raises(NumericError):
        check_divergence(2e3, "critic loss")
    with pytest.raises(NumericError):
        check_divergence(float("nan"), "critic loss")
    check_divergence(-999.0, "critic loss")


def test_swiss_roll_reaches_emd_target():
    pts = make_dataset("swiss_roll", 20_000, 0).points
    prior = LatentPrior()
    G, _, _ = pretrain(pts, prior, toy_wgan_config(0, steps=4000))
    r = np.random.default_rng(2)
    scores = [emd(make_dataset("swiss_roll", 1024, [0, 500 + i]).points, G(prior.sample(1024, r))) for i in range(3)]
    assert np.mean(scores) <= 0.06, scores

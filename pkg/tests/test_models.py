import numpy as np
import pytest

from latent_reweighting.errors import ConfigError
from latent_reweighting.models import (AdamState, LatentPrior, MlpParams, MlpSpec, Net, adam_step, critic_forward,
                                       generator_forward, importance_forward, mlp_init, prior_sample)

from conftest import random_net


def test_init_is_deterministic_with_zero_biases():
    spec = MlpSpec((2, 16, 16, 1))
    a, b = mlp_init(spec, 5), mlp_init(spec, 5)
    assert a.equals(b)
    assert all(np.all(bias == 0) for bias in a.biases)
    assert not a.equals(mlp_init(spec, 6))


def test_init_variance_matches_he_scale():
    params = mlp_init(MlpSpec((400, 400, 1)), 0)
    var = params.weights[0].var()
    assert abs(var - 2.0 / 400) <= 0.2 * 2.0 / 400


def test_identity_generator():
    # relu(z) - relu(-z) = z through a two-layer net
    spec = MlpSpec((2, 4, 2))
    W0 = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    W1 = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    G = Net(spec, MlpParams([W0, W1], [np.zeros((1, 4)), np.zeros((1, 2))]))
    out = generator_forward(G, np.array([[0.3, -0.7]]))
    assert np.allclose(out, [[0.3, -0.7]])


def test_forward_batches_preserve_order():
    D = random_net((2, 8, 8, 1), 1)
    x = np.random.default_rng(0).standard_normal((10, 2))
    full = critic_forward(D, x)
    rows = np.vstack([critic_forward(D, x[i:i + 1]) for i in range(10)])
    assert full.shape == (10, 1)
    assert np.allclose(full, rows, atol=1e-14)
    perm = np.random.default_rng(1).permutation(10)
    assert np.allclose(critic_forward(D, x[perm]), full[perm], atol=1e-14)


def test_forward_rejects_wrong_width():
    D = random_net((2, 8, 1), 1)
    with pytest.raises(ConfigError):
        D(np.zeros((4, 3)))


def test_importance_output_non_negative():
    w = random_net((2, 16, 16, 1), 3, hidden="relu", output="relu")
    z = np.random.default_rng(0).standard_normal((2000, 2)) * 3
    assert np.all(importance_forward(w, z) >= 0)

    spec = MlpSpec((2, 4, 1), output="relu")
    params = MlpParams([np.zeros((2, 4)), np.zeros((4, 1))], [np.zeros((1, 4)), np.full((1, 1), -10.0)])
    assert np.all(importance_forward(Net(spec, params), z) == 0)


def test_input_gradient_matches_finite_differences():
    w = random_net((2, 16, 16, 1), 9, hidden="relu", output="relu", bias_scale=0.5)
    w.params.biases[-1][:] = 5.0  # keep the output relu active
    z = np.random.default_rng(2).standard_normal((20, 2))
    h = 1e-6
    fd = np.zeros_like(z)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (w(z + e) - w(z - e)).ravel() / (2 * h)
    assert np.allclose(w.input_gradient(z), fd, rtol=1e-5, atol=1e-7)


def test_generator_jacobian_matches_finite_differences():
    G = random_net((2, 12, 12, 2), 4, hidden="relu")
    z = np.random.default_rng(3).standard_normal((1, 2))
    h = 1e-6
    jac_fd = np.stack([(G(z + h * e) - G(z - h * e)).ravel() / (2 * h) for e in np.eye(2)], axis=1)
    # relu net is piecewise linear: the Jacobian is the product of active weights
    hdn = z
    J = np.eye(2)
    for i, (W, b) in enumerate(zip(G.params.weights, G.params.biases)):
        pre = hdn @ W + b
        J = J @ W
        if i < len(G.params.weights) - 1:
            mask = (pre >= 0).astype(float)
            J = J * mask
            hdn = pre * mask
    assert np.allclose(J.T, jac_fd, atol=1e-7)


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([[1.0, 2.0]])]
    state = AdamState(lr=0.1)
    for _ in range(5):
        p = adam_step(p, [np.zeros((1, 2))], state)
    assert np.array_equal(p[0], [[1.0, 2.0]])


def test_adam_first_step_hand_value():
    state = AdamState(lr=0.1, beta1=0.5, beta2=0.9, eps=1e-8)
    [p] = adam_step([np.array([[1.0]])], [np.array([[1.0]])], state)
    # m_hat = v_hat = 1 after bias correction
    assert p[0, 0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_is_deterministic_and_checks_shapes():
    def run():
        s = AdamState(lr=0.01)
        p = [np.ones((2, 2))]
        for k in range(4):
            p = adam_step(p, [np.full((2, 2), k - 1.5)], s)
        return p[0]
    assert np.array_equal(run(), run())
    with pytest.raises(ConfigError):
        adam_step([np.ones((2, 2))], [np.ones((2, 3))], AdamState())
    with pytest.raises(ConfigError):
        AdamState(beta1=1.0)


def test_prior_moments_and_support():
    z = prior_sample(LatentPrior("gaussian", 2), 100_000, np.random.default_rng(0))
    assert np.all(np.abs(z.mean(axis=0)) <= 0.02)
    assert np.all((z.var(axis=0) >= 0.97) & (z.var(axis=0) <= 1.03))
    u = prior_sample(LatentPrior("uniform", 2), 10_000, np.random.default_rng(0))
    assert u.min() >= -1 and u.max() <= 1
    a = LatentPrior().sample(5, np.random.default_rng(7))
    b = LatentPrior().sample(5, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_spec_validation():
    with pytest.raises(ConfigError):
        MlpSpec((2, 1))
    with pytest.raises(ConfigError):
        MlpSpec((2, 4, 1), hidden="gelu")
    with pytest.raises(ConfigError):
        LatentPrior("laplace", 2)
    spec = MlpSpec((2, 4, 1))
    assert MlpSpec.from_dict(spec.to_dict()) == spec
    bad = mlp_init(spec, 0)
    bad.weights[0] = np.zeros((3, 4))
    with pytest.raises(ConfigError):
        bad.check(spec)


def test_large_batches_are_evaluated_in_chunks(monkeypatch):
    import latent_reweighting.models as models
    w = random_net((2, 8, 1), 0)
    x = np.random.default_rng(0).standard_normal((1000, 2))
    full, grad = w(x), w.input_gradient(x)
    monkeypatch.setattr(models, "EVAL_CHUNK", 64)
    assert np.array_equal(w(x), full)
    assert np.array_equal(w.input_gradient(x), grad)

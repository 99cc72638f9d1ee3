"""Mixture density estimator: closed forms, sampling oracles and a small training run."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftvo.mdn import (LOG_2PI, SIGMA_FLOOR, GRUCell, MdnEstimator, MixtureParams, batch_nll, mixture_moments,
                       mixture_nll, stream_inputs, train_mdn, unit_gaussian_nll)
from aftvo.numerics import Tensor
from aftvo.sim import SensorSpec, generate_trajectory, sample_sensor, stream_truth

from helpers import grad_error


def random_mixture(rng, x=3, scale=1.0):
    alpha = rng.dirichlet(np.ones(x))
    return MixtureParams(alpha, rng.normal(0, scale, (x, 6)), rng.uniform(0.2, 1.5, (x, 6)))


def naive_nll(p, y):
    dens = 0.0
    for a, m, s in zip(p.alpha, p.mu, p.sigma):
        dens += a * np.prod(np.exp(-0.5 * ((y - m) / s) ** 2) / (np.sqrt(2 * np.pi) * s))
    return -math.log(dens)


def test_single_unit_component_at_mean():
    mu = np.arange(6.0)
    p = MixtureParams(np.ones(1), mu[None], np.ones((1, 6)))
    assert mixture_nll(p, mu) == pytest.approx(3 * LOG_2PI, abs=1e-10)
    assert 3 * LOG_2PI == pytest.approx(5.5137, abs=1e-4)


def test_single_component_closed_form_with_sigma():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sigma = rng.uniform(0.05, 3.0, 6)
        mu = rng.normal(size=6)
        p = MixtureParams(np.ones(1), mu[None], sigma[None])
        assert mixture_nll(p, mu) == pytest.approx(3 * LOG_2PI + np.log(sigma).sum(), abs=1e-10)


def test_degenerate_two_component_mixture():
    rng = np.random.default_rng(1)
    mu, sigma, y = rng.normal(size=6), rng.uniform(0.5, 2, 6), rng.normal(size=6)
    one = MixtureParams(np.ones(1), mu[None], sigma[None])
    two = MixtureParams(np.array([0.5, 0.5]), np.stack([mu, mu]), np.stack([sigma, sigma]))
    assert mixture_nll(two, y) == pytest.approx(mixture_nll(one, y), abs=1e-12)


def test_nll_matches_naive_density():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = random_mixture(rng)
        y = rng.normal(size=6)
        assert mixture_nll(p, y) == pytest.approx(naive_nll(p, y), rel=1e-10)


def test_moments_closed_forms():
    rng = np.random.default_rng(3)
    mu, sigma = rng.normal(size=6), rng.uniform(0.5, 2, 6)
    m, v = mixture_moments(MixtureParams(np.ones(1), mu[None], sigma[None]))
    assert np.allclose(m, mu) and np.allclose(v, sigma ** 2)
    sym = MixtureParams(np.array([0.5, 0.5]), np.stack([mu, -mu]), np.stack([sigma, sigma]))
    m, v = mixture_moments(sym)
    assert np.allclose(m, 0.0) and np.allclose(v, sigma ** 2 + mu ** 2)


def sample_mixture(p, n, rng):
    comp = rng.choice(p.n_components, size=n, p=p.alpha)
    return p.mu[comp] + p.sigma[comp] * rng.standard_normal((n, 6))


def test_moments_match_monte_carlo():
    rng = np.random.default_rng(4)
    for _ in range(5):
        # offset keeps the means away from zero so a 1% relative tolerance is meaningful
        p = random_mixture(rng)
        p.mu += 5.0
        y = sample_mixture(p, 1_000_000, rng)
        m, v = mixture_moments(p)
        assert np.allclose(y.mean(axis=0), m, rtol=0.01)
        assert np.allclose(y.var(axis=0), v, rtol=0.01)


def test_gru_bounded_and_deterministic():
    rng = np.random.default_rng(0)
    cell = GRUCell(rng, 5, 8)
    h = cell(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 8)))).data
    assert np.all(np.abs(h) < 1)
    x = np.random.default_rng(1).normal(size=(2, 5))
    a = cell(Tensor(x), Tensor(np.zeros((2, 8)))).data
    b = cell(Tensor(x), Tensor(np.zeros((2, 8)))).data
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        cell(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 8))))


def test_embedding_examples():
    model = MdnEstimator(hidden=8, n_components=3, seed=0)
    zero = model.encode_measurement(np.zeros((1, 7))).data
    assert np.allclose(zero, np.tanh(model.embed.bias.data))
    obs = np.random.default_rng(0).normal(size=(1, 7))
    assert np.array_equal(model.encode_measurement(np.vstack([obs, obs])).data[0],
                          model.encode_measurement(np.vstack([obs, obs])).data[1])


def test_head_shapes_simplex_and_floor():
    model = MdnEstimator(hidden=8, n_components=3, seed=0)
    r = Tensor(np.random.default_rng(0).normal(0, 50, (4, 8)))
    la, mu, sg = model.mdn_head(r)
    assert la.shape == (4, 3) and mu.shape == (4, 3, 6) and sg.shape == (4, 3, 6)
    assert np.allclose(np.exp(la.data).sum(axis=-1), 1.0, atol=1e-6)
    # large negative pre-activations push softplus to zero; the floor remains
    model.head.bias.data[3 * 7:] = -1e4
    _, _, sg = model.mdn_head(Tensor(np.zeros((2, 8))))
    assert np.all(sg.data >= SIGMA_FLOOR)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 100))
def test_predicted_mixture_is_valid(seed, scale):
    model = MdnEstimator(hidden=6, n_components=2, seed=seed)
    obs = np.random.default_rng(seed).normal(0, scale, (1, 5, 7))
    p = model.predict(obs)
    assert np.allclose(p.alpha.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(p.sigma >= SIGMA_FLOOR)
    y = np.random.default_rng(seed + 1).normal(size=(1, 5, 6))
    assert np.all(np.isfinite(mixture_nll(p, y)))


def test_gradients_through_unrolled_gru():
    model = MdnEstimator(hidden=5, n_components=2, seed=3)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(2, 5, 7))
    y = rng.normal(size=(2, 5, 6))
    err = grad_error(lambda: batch_nll(model, obs, y), model.parameters())
    assert err < 1e-3


def test_embedding_gradient():
    model = MdnEstimator(hidden=4, n_components=1, seed=0)
    obs = np.random.default_rng(1).normal(size=(3, 7))
    w = np.random.default_rng(2).normal(size=(3, 4))
    err = grad_error(lambda: (model.encode_measurement(obs) * w).sum(), model.embed.parameters())
    assert err < 1e-4


def _noisy_streams(seed, noise=0.0, windows=()):
    traj = generate_trajectory("random_smooth", 40.0, seed=seed)
    spec = SensorSpec(0, 20.0, 2_000, noise_std_translation=noise, noise_std_rotation=noise / 10,
                      degradation_windows=list(windows))
    s = sample_sensor(traj, spec, seed=seed)
    return s, stream_inputs(s), stream_truth(traj, s)


def test_training_beats_unit_gaussian_and_is_deterministic():
    data = [_noisy_streams(i) for i in range(4)]
    xs, ys = [d[1] for d in data[:3]], [d[2] for d in data[:3]]
    kw = dict(hidden=12, n_components=2, epochs=3, seq_len=16, lr=3e-3)
    a = train_mdn(xs, ys, seed=0, **kw)
    b = train_mdn(xs, ys, seed=0, **kw)
    assert a.train_nll == b.train_nll
    _, x_val, y_val = data[3]
    p = a.model.predict(x_val)
    assert float(np.mean(mixture_nll(p, y_val))) < unit_gaussian_nll(y_val)


def test_sigma_grows_in_degradation_windows():
    win = [(10_000_000, 20_000_000, 6.0), (28_000_000, 34_000_000, 6.0)]
    data = [_noisy_streams(i, noise=0.02, windows=win) for i in range(4)]
    res = train_mdn([d[1] for d in data[:3]], [d[2] for d in data[:3]], hidden=12, n_components=2,
                    epochs=4, seq_len=16, lr=3e-3, seed=1)
    s, x, _ = data[3]
    _, var = mixture_moments(res.model.predict(x))
    total = var[:, :3].sum(axis=-1)
    degraded = s.noise_scale > 1
    assert np.median(total[degraded]) > np.median(total[~degraded])


def test_unit_gaussian_nll_at_mean():
    assert unit_gaussian_nll(np.zeros((3, 6))) == pytest.approx(3 * LOG_2PI)

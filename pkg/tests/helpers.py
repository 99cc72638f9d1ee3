"""Shared test utilities: finite-difference gradient checks and small fixtures."""

from __future__ import annotations

import numpy as np

from aftvo.aft import FusionWindow
from aftvo.numerics import (Tensor, backward, concat, exp, layer_norm, log, log_softmax, logsumexp, masked_fill,
                            matmul, numerical_gradient, relative_error, relu, sigmoid, softmax, softplus, square, tanh)
from aftvo.numerics import tensor as T

P = 8  # payload width used by the fusion-window fixtures


def grad_error(f, params, h=1e-5, max_entries=None, rng=None, floor=1e-8):
    """Worst relative error between backward() and central differences over ``params``.

    With ``max_entries`` only that many randomly chosen entries per parameter
    are perturbed; the analytic gradient is compared on the same entries.
    ``floor`` bounds the denominator, so a gradient that is zero in exact
    arithmetic is compared in absolute terms against finite-difference noise.
    """
    for p in params:
        p.grad = None
    backward(f(), params)
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, analytic):
        if max_entries is None or p.data.size <= max_entries:
            num = numerical_gradient(f, p, h)
            worst = max(worst, relative_error(g, num, floor))
            continue
        idx = rng.choice(p.data.size, size=max_entries, replace=False)
        num = numerical_gradient(f, p, h, idx)
        worst = max(worst, relative_error(g.reshape(-1)[idx], num, floor))
    return worst


def leaf(rng, *shape, scale=1.0, shift=0.0):
    return Tensor(rng.standard_normal(shape) * scale + shift, requires_grad=True)


# Each case builds a scalar from fresh leaves; inputs are kept away from kinks (relu at 0, log near 0).
def op_cases(rng):
    w = rng.standard_normal((3, 4))
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    bb = leaf(rng, 4)
    pos = leaf(rng, 3, 4, scale=0.3, shift=2.0)
    away = Tensor(np.where(rng.random((3, 4)) < 0.5, -1, 1) * rng.uniform(0.2, 2.0, (3, 4)), requires_grad=True)
    m5, m4 = leaf(rng, 5, 4), leaf(rng, 4, 3)
    b1, b2 = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
    gain, bias = leaf(rng, 4), leaf(rng, 4)
    mask = rng.random((3, 4)) < 0.3
    mask[:, 0] = False
    w53, w235 = rng.standard_normal((5, 3)), rng.standard_normal((2, 3, 5))
    return {
        "add": (lambda: ((a + bb) * w).sum(), [a, bb]),
        "sub": (lambda: ((a - b) * w).sum(), [a, b]),
        "mul": (lambda: ((a * b) * w).sum(), [a, b]),
        "div": (lambda: ((a / pos) * w).sum(), [a, pos]),
        "square": (lambda: (square(a) * w).sum(), [a]),
        "exp": (lambda: (exp(a) * w).sum(), [a]),
        "log": (lambda: (log(pos) * w).sum(), [pos]),
        "relu": (lambda: (relu(away) * w).sum(), [away]),
        "softplus": (lambda: (softplus(a) * w).sum(), [a]),
        "sigmoid": (lambda: (sigmoid(a) * w).sum(), [a]),
        "tanh": (lambda: (tanh(a) * w).sum(), [a]),
        "masked_fill": (lambda: (softmax(masked_fill(a, mask)) * w).sum(), [a]),
        "sum_axis": (lambda: (T.sum_(a, axis=0) * w[0]).sum(), [a]),
        "mean": (lambda: (T.mean(a, axis=-1) * w[:, 0]).sum(), [a]),
        "reshape_transpose": (lambda: (T.transpose(T.reshape(a, (4, 3))) * w).sum(), [a]),
        "index": (lambda: (a[1:, ::2] * w[1:, ::2]).sum(), [a]),
        "concat": (lambda: (concat([a, b], axis=0) * np.vstack([w, w])).sum(), [a, b]),
        "matmul": (lambda: (matmul(m5, m4) * w53).sum(), [m5, m4]),
        "matmul_batched": (lambda: (matmul(b1, b2) * w235).sum(), [b1, b2]),
        "softmax": (lambda: (softmax(a) * w).sum(), [a]),
        "log_softmax": (lambda: (log_softmax(a) * w).sum(), [a]),
        "logsumexp": (lambda: (logsumexp(a) * w[:, 0]).sum(), [a]),
        "layer_norm": (lambda: (layer_norm(a, gain, bias) * w).sum(), [a, gain, bias]),
    }


def random_window(rng, n_sources=3, U=5, span_us=2_000_000, payload_dim=P):
    """Items from ``n_sources`` jittered streams of random rate inside one window."""
    anchor = int(rng.integers(0, 10_000_000))
    times, sources = [], []
    for k in range(n_sources):
        rate = rng.uniform(5, 30)
        period = 1e6 / rate
        t = anchor + rng.uniform(0, period) + np.arange(int(span_us / period)) * period
        t += np.clip(rng.normal(0, 0.1 * period, len(t)), -0.4 * period, 0.4 * period)
        t = np.round(t[(t > anchor) & (t <= anchor + span_us)]).astype(np.int64)
        times.append(t)
        sources.append(np.full(len(t), k))
    times, sources = np.concatenate(times), np.concatenate(sources)
    if len(times) == 0:
        times, sources = np.array([anchor + 1]), np.array([0])
    queries = anchor + np.arange(1, U + 1) * (span_us // U)
    return FusionWindow(sources, times, rng.normal(size=(len(times), payload_dim)), anchor, queries,
                        rng.normal(0, 0.1, (U, 6)))


def brute_force_bins(t, window, step, max_bins):
    edges = int(np.min(window)) + step * np.arange(max_bins + 1)
    member = (t[:, None] >= edges[None, :-1]) & (t[:, None] < edges[None, 1:])
    assert np.all(member.sum(axis=1) == 1)
    return member.argmax(axis=1)

"""Per-sensor recurrent mixture density estimator of relative poses.

Each sensor gets its own :class:`MdnEstimator`: a measurement embedding,
a GRU over the sensor's observation sequence and a head emitting an
``X``-component diagonal Gaussian mixture over the 6-DoF relative pose.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (Adam, Linear, Module, NumericalError, Tensor, backward, clip_grad_norm,
                       log_softmax, logsumexp, sigmoid, softplus, tanh)
from .numerics import tensor as T
from .sim.sensors import MeasurementStream

log = logging.getLogger(__name__)

POSE_DIM = 6
OBS_DIM = 7
SIGMA_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MixtureParams:
    """Numpy view of a mixture; leading axes are batch axes."""

    alpha: np.ndarray   # (..., X)
    mu: np.ndarray      # (..., X, 6)
    sigma: np.ndarray   # (..., X, 6)

    @property
    def n_components(self) -> int:
        return self.alpha.shape[-1]

    def payload(self) -> np.ndarray:
        """alpha || mu || sigma flattened to (..., 13 X)."""
        lead = self.alpha.shape[:-1]
        return np.concatenate([self.alpha, self.mu.reshape(*lead, -1), self.sigma.reshape(*lead, -1)], axis=-1)

    @classmethod
    def from_payload(cls, payload: np.ndarray, n_components: int) -> "MixtureParams":
        x = n_components
        lead = payload.shape[:-1]
        return cls(payload[..., :x], payload[..., x:7 * x].reshape(*lead, x, POSE_DIM),
                   payload[..., 7 * x:].reshape(*lead, x, POSE_DIM))

    def __getitem__(self, idx) -> "MixtureParams":
        return MixtureParams(self.alpha[idx], self.mu[idx], self.sigma[idx])


def gaussian_mixture_nll(log_alpha: Tensor, mu: Tensor, sigma: Tensor, y) -> Tensor:
    """Per-sample -log sum_i alpha_i N(y; mu_i, diag sigma_i^2) via log-sum-exp.

    Shapes: log_alpha (..., X), mu/sigma (..., X, 6), y (..., 6).  Returns (...).
    """
    y = T.as_tensor(y)
    yb = T.reshape(y, y.shape[:-1] + (1, POSE_DIM))
    z = (yb - mu) / sigma
    log_phi = -(T.sum_(T.log(sigma), axis=-1) + 0.5 * T.sum_(T.square(z), axis=-1)) - 0.5 * POSE_DIM * LOG_2PI
    out = -logsumexp(log_alpha + log_phi, axis=-1)
    return out


def mixture_nll(p: MixtureParams, y) -> float | np.ndarray:
    """Negative log likelihood of ``y`` under ``p`` (numpy in, numpy out)."""
    val = gaussian_mixture_nll(Tensor(np.log(p.alpha)), Tensor(p.mu), Tensor(p.sigma), Tensor(y)).data
    if not np.all(np.isfinite(val)):
        raise NumericalError("mixture NLL is not finite")
    return float(val) if val.ndim == 0 else val


def mixture_moments(p: MixtureParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-dimension variance of the mixture."""
    a = p.alpha[..., None]
    mean = (a * p.mu).sum(axis=-2)
    second = (a * (p.sigma ** 2 + p.mu ** 2)).sum(axis=-2)
    return mean, np.maximum(second - mean ** 2, 0.0)


class GRUCell(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, hidden: int):
        self.hidden = hidden
        self.w_in = Linear(rng, n_in, 3 * hidden)
        self.w_hid = Linear(rng, hidden, 3 * hidden)

    def __call__(self, w: Tensor, h: Tensor) -> Tensor:
        if w.shape[-1] != self.w_in.n_in or h.shape[-1] != self.hidden:
            raise T.DimensionError(f"rnn_step: input {w.shape} / state {h.shape} vs H={self.hidden}")
        H = self.hidden
        gi = self.w_in(w)
        gh = self.w_hid(h)
        z = sigmoid(gi[..., :H] + gh[..., :H])
        r = sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
        n = tanh(gi[..., 2 * H:] + r * gh[..., 2 * H:])
        return (1.0 - z) * n + z * h


class MdnEstimator(Module):
    """Embedding -> GRU -> mixture head for one sensor.

    ``obs_mean``/``obs_std`` standardise the 7-value observation and
    ``target_mean``/``target_std`` put the mixture in pose units; they are
    fixed statistics of the training data, not learned.
    """

    def __init__(self, hidden: int = 64, n_components: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.n_components = n_components
        self.embed = Linear(rng, OBS_DIM, hidden)
        self.rnn = GRUCell(rng, hidden, hidden)
        self.head = Linear(rng, hidden, n_components * (1 + 2 * POSE_DIM))
        self.obs_mean = np.zeros(OBS_DIM)
        self.obs_std = np.ones(OBS_DIM)
        self.target_mean = np.zeros(POSE_DIM)
        self.target_std = np.ones(POSE_DIM)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"obs_mean": self.obs_mean, "obs_std": self.obs_std,
                "target_mean": self.target_mean, "target_std": self.target_std}

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        for k in self.buffers():
            setattr(self, k, np.array(bufs[k], dtype=float))

    def encode_measurement(self, obs) -> Tensor:
        """obs: (..., 7) = relative pose 6-vector plus noise scale."""
        x = (T.as_tensor(obs) - self.obs_mean) / self.obs_std
        return tanh(self.embed(x))

    def rnn_step(self, w: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
        h_new = self.rnn(w, h)
        return h_new, h_new

    def mdn_head(self, r: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (log_alpha (...,X), mu (...,X,6), sigma (...,X,6))."""
        X = self.n_components
        out = self.head(r)
        lead = out.shape[:-1]
        log_alpha = log_softmax(out[..., :X], axis=-1)
        mu = T.reshape(out[..., X:7 * X], lead + (X, POSE_DIM)) * self.target_std + self.target_mean
        sigma = softplus(T.reshape(out[..., 7 * X:], lead + (X, POSE_DIM))) * self.target_std + SIGMA_FLOOR
        return log_alpha, mu, sigma

    def forward(self, obs_seq: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """obs_seq: (B, T, 7).  Returns head outputs with shapes (B, T, ...)."""
        B, n_steps, _ = obs_seq.shape
        w_all = self.encode_measurement(obs_seq)
        h = Tensor(np.zeros((B, self.hidden)))
        outs = []
        for t in range(n_steps):
            r, h = self.rnn_step(w_all[:, t], h)
            outs.append(T.reshape(r, (B, 1, self.hidden)))
        r_all = T.concat(outs, axis=1)
        return self.mdn_head(r_all)

    def predict(self, obs_seq: np.ndarray) -> MixtureParams:
        """Mixture for every step of one or more full sequences, state reset at the start."""
        squeeze = obs_seq.ndim == 2
        seq = obs_seq[None] if squeeze else obs_seq
        la, mu, sg = self.forward(seq)
        p = MixtureParams(np.exp(la.data), mu.data, sg.data)
        return p[0] if squeeze else p


def stream_inputs(stream: MeasurementStream) -> np.ndarray:
    return np.concatenate([stream.observations, stream.noise_scale[:, None]], axis=1)


def _chunks(x: np.ndarray, y: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    n = (len(x) // length) * length
    return x[:n].reshape(-1, length, x.shape[1]), y[:n].reshape(-1, length, y.shape[1])


@dataclass
class MdnTrainResult:
    model: MdnEstimator
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)


def fit_normalisation(model: MdnEstimator, inputs: list[np.ndarray], targets: list[np.ndarray]) -> None:
    x = np.concatenate(inputs)
    y = np.concatenate(targets)
    model.obs_mean = x.mean(axis=0)
    model.obs_std = np.where(x.std(axis=0) > 1e-8, x.std(axis=0), 1.0)
    model.target_mean = y.mean(axis=0)
    model.target_std = np.where(y.std(axis=0) > 1e-8, y.std(axis=0), 1.0)


def batch_nll(model: MdnEstimator, x: np.ndarray, y: np.ndarray) -> Tensor:
    la, mu, sg = model.forward(x)
    return T.mean(gaussian_mixture_nll(la, mu, sg, y))


def train_mdn(inputs: list[np.ndarray], targets: list[np.ndarray], *, hidden: int = 64,
              n_components: int = 3, epochs: int = 30, lr: float = 1e-3, batch_size: int = 16,
              seq_len: int = 32, seed: int = 0, val_inputs: list[np.ndarray] | None = None,
              val_targets: list[np.ndarray] | None = None, clip: float = 5.0) -> MdnTrainResult:
    """Fit one sensor's estimator by minimising the mixture NLL of the true relative poses.

    ``inputs[i]`` is a (T_i, 7) observation sequence and ``targets[i]`` the
    aligned (T_i, 6) ground-truth relative poses.
    """
    model = MdnEstimator(hidden, n_components, seed)
    fit_normalisation(model, inputs, targets)
    xs, ys = zip(*(_chunks(x, y, seq_len) for x, y in zip(inputs, targets)))
    X = np.concatenate(xs)
    Y = np.concatenate(ys)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed + 1)
    result = MdnTrainResult(model)

    def evaluate() -> float:
        if not val_inputs:
            return float("nan")
        vals = [batch_nll(model, x[None], y[None]).item() * len(x) for x, y in zip(val_inputs, val_targets)]
        return float(sum(vals) / sum(len(x) for x in val_inputs))

    result.val_nll.append(evaluate())
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss = batch_nll(model, X[idx], Y[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(f"MDN loss diverged at epoch {epoch}")
            model.zero_grad()
            backward(loss, params)
            clip_grad_norm(params, clip)
            opt.step()
            total += loss.item() * len(idx)
        result.train_nll.append(total / len(X))
        result.val_nll.append(evaluate())
        log.debug("mdn epoch %d train %.4f val %.4f", epoch, result.train_nll[-1], result.val_nll[-1])
    return result


def unit_gaussian_nll(y: np.ndarray, mean: np.ndarray | None = None) -> float:
    """Average NLL of ``y`` under N(mean, I); the fixed baseline the MDN must beat."""
    mean = np.zeros(POSE_DIM) if mean is None else mean
    d = y - mean
    return float(np.mean(0.5 * (d * d).sum(axis=-1) + 0.5 * POSE_DIM * LOG_2PI))

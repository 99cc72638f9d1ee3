"""The asynchronous fusion transformer."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import LayerNorm, Linear, Module, Tensor, masked_fill, relu, softmax
from ..numerics import tensor as T
from .discretiser import DiscretiserConfig, sinusoid_table
from .windows import WindowBatch, canonical_variant

POSE_DIM = 6


@dataclass
class AftConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 128
    step_us: int = 20_000
    max_bins: int = 400
    rotation_weight: float = 100.0
    variant: str = "full"

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sinusoid table")

    @property
    def discretiser(self) -> DiscretiserConfig:
        return DiscretiserConfig(self.step_us, self.max_bins)

    def to_dict(self) -> dict:
        return asdict(self)


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int):
        self.n_heads = n_heads
        self.q = Linear(rng, d_model, d_model)
        self.k = Linear(rng, d_model, d_model)
        self.v = Linear(rng, d_model, d_model)
        self.o = Linear(rng, d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        B, n, D = x.shape
        return T.transpose(T.reshape(x, (B, n, self.n_heads, D // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor, blocked: np.ndarray | None) -> Tensor:
        """``blocked`` broadcasts to (B, heads, n_q, n_kv); True entries are never attended."""
        B, n_q, D = x_q.shape
        q, k, v = self._split(self.q(x_q)), self._split(self.k(x_kv)), self._split(self.v(x_kv))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(D // self.n_heads))
        if blocked is not None:
            scores = masked_fill(scores, blocked)
        ctx = T.matmul(softmax(scores, axis=-1), v)
        return self.o(T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, n_q, D)))


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, ff_dim: int):
        self.l1 = Linear(rng, d_model, ff_dim)
        self.l2 = Linear(rng, ff_dim, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(relu(self.l1(x)))


class EncoderLayer(Module):
    def __init__(self, rng, d_model, n_heads, ff_dim):
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm1 = LayerNorm(d_model)
        self.ff = FeedForward(rng, d_model, ff_dim)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x: Tensor, blocked) -> Tensor:
        x = self.norm1(x + self.attn(x, x, blocked))
        return self.norm2(x + self.ff(x))


class DecoderLayer(Module):
    def __init__(self, rng, d_model, n_heads, ff_dim):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm2 = LayerNorm(d_model)
        self.ff = FeedForward(rng, d_model, ff_dim)
        self.norm3 = LayerNorm(d_model)

    def __call__(self, m: Tensor, memory: Tensor, self_blocked, cross_blocked) -> Tensor:
        m = self.norm1(m + self.self_attn(m, m, self_blocked))
        m = self.norm2(m + self.cross_attn(m, memory, cross_blocked))
        return self.norm3(m + self.ff(m))


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), k=1)


class FusionTransformer(Module):
    """Encoder over projected mixture items, autoregressive pose decoder over query timestamps.

    Fixed (non-learned) buffers standardise the payload and the pose
    targets; they default to identity and are fitted from training data.
    """

    def __init__(self, cfg: AftConfig, n_sources: int, payload_dim: int, seed: int = 0):
        self.cfg = cfg
        self.n_sources = n_sources
        self.payload_dim = payload_dim
        rng = np.random.default_rng(seed)
        D = cfg.d_model
        self.input_proj = Linear(rng, payload_dim, D)
        self.source_enc = Linear(rng, n_sources, D) if cfg.variant != "no_source" else None
        self.pose_embed = Linear(rng, POSE_DIM, D)
        self.encoder = [EncoderLayer(rng, D, cfg.n_heads, cfg.ff_dim) for _ in range(cfg.n_layers)]
        self.decoder = [DecoderLayer(rng, D, cfg.n_heads, cfg.ff_dim) for _ in range(cfg.n_layers)]
        self.out = Linear(rng, D, POSE_DIM)
        self.pe_table = sinusoid_table(cfg.max_bins, D)
        self.payload_mean = np.zeros(payload_dim)
        self.payload_std = np.ones(payload_dim)
        self.target_mean = np.zeros(POSE_DIM)
        self.target_std = np.ones(POSE_DIM)

    # -- buffers -------------------------------------------------------------
    def buffers(self) -> dict[str, np.ndarray]:
        return {"payload_mean": self.payload_mean, "payload_std": self.payload_std,
                "target_mean": self.target_mean, "target_std": self.target_std}

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        for k in self.buffers():
            setattr(self, k, np.array(bufs[k], dtype=float))

    def fit_normalisation(self, payload: np.ndarray, targets: np.ndarray) -> None:
        def std(x):
            s = x.std(axis=0)
            return np.where(s > 1e-8, s, 1.0)
        self.payload_mean, self.payload_std = payload.mean(axis=0), std(payload)
        self.target_mean, self.target_std = targets.mean(axis=0), std(targets)

    # -- input encodings -------------------------------------------------------
    def project_input(self, payload) -> Tensor:
        payload = np.asarray(payload, dtype=float)
        if payload.shape[-1] != self.payload_dim:
            raise T.DimensionError(f"payload length {payload.shape[-1]} != {self.payload_dim}")
        return self.input_proj((payload - self.payload_mean) / self.payload_std)

    def positional(self, pos: np.ndarray) -> np.ndarray | None:
        if self.cfg.variant == "no_time":
            return None
        if np.any(pos >= len(self.pe_table)) or np.any(pos < 0):
            raise T.DimensionError("position outside the positional table")
        return self.pe_table[pos]

    def source_encode(self, k) -> Tensor:
        k = np.asarray(k)
        if np.any(k < 0) or np.any(k >= self.n_sources):
            raise KeyError(f"unknown source id in {np.unique(k)}")
        if self.source_enc is None:
            raise RuntimeError("source encoding is ablated in this model")
        return self.source_enc(np.eye(self.n_sources)[k])

    def embed_items(self, batch: WindowBatch) -> Tensor:
        f = self.project_input(batch.payload)
        pe = self.positional(batch.item_pos)
        if pe is not None:
            f = f + pe
        if self.source_enc is not None:
            f = f + self.source_encode(batch.sources)
        return f

    # -- encoder / decoder -------------------------------------------------------
    def encode(self, batch: WindowBatch) -> Tensor:
        x = self.embed_items(batch)
        blocked = ~batch.item_valid[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, blocked)
        return x

    def decoder_inputs(self, poses: np.ndarray) -> np.ndarray:
        """BOS zero pose followed by the first U-1 poses: (B, U, 6) -> (B, U, 6)."""
        B = poses.shape[0]
        return np.concatenate([np.zeros((B, 1, POSE_DIM)), poses[:, :-1]], axis=1)

    def decode(self, batch: WindowBatch, memory: Tensor, dec_in: np.ndarray) -> Tensor:
        U = dec_in.shape[1]
        m = self.pose_embed((dec_in - self.target_mean) / self.target_std)
        pe = self.positional(batch.query_pos[:, :U])
        if pe is not None:
            m = m + pe
        self_blocked = causal_mask(U)[None, None] | ~batch.query_valid[:, None, None, :U]
        cross_blocked = ~batch.item_valid[:, None, None, :]
        for layer in self.decoder:
            m = layer(m, memory, self_blocked, cross_blocked)
        return self.out(m) * self.target_std + self.target_mean

    def forward(self, batch: WindowBatch, teacher: np.ndarray | None = None) -> Tensor:
        """Teacher-forced pass; ``teacher`` defaults to ``batch.targets``."""
        teacher = batch.targets if teacher is None else teacher
        if teacher is None:
            raise ValueError("teacher forcing needs target poses")
        return self.decode(batch, self.encode(batch), self.decoder_inputs(teacher))

    def infer(self, batch: WindowBatch) -> np.ndarray:
        """Autoregressive decoding: each step consumes the previous predicted pose."""
        memory = self.encode(batch)
        B, U = batch.query_pos.shape
        preds = np.zeros((B, U, POSE_DIM))
        for u in range(U):
            out = self.decode(batch, memory, self.decoder_inputs(preds[:, :u + 1]))
            preds[:, u] = out.data[:, u]
        return preds


def fusion_loss(pred: Tensor, target, rotation_weight: float = 100.0, valid: np.ndarray | None = None) -> Tensor:
    """Mean over steps of ||dt||^2 + weight * ||drot||^2."""
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise T.DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    w = np.array([1.0, 1.0, 1.0] + [rotation_weight] * 3)
    per_step = T.sum_(T.square(pred - target) * w, axis=-1)
    if valid is None:
        return T.mean(per_step)
    valid = np.asarray(valid, dtype=float)
    return T.sum_(per_step * valid) * (1.0 / valid.sum())

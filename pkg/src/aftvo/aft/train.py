"""Teacher-forced training of the fusion transformer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..numerics import Adam, NumericalError, backward, clip_grad_norm
from .model import AftConfig, FusionTransformer, fusion_loss
from .windows import FusionWindow, collate

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    clip_norm: float = 5.0
    # std of Gaussian corruption of teacher-forced decoder inputs, in units of the target std
    teacher_noise: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"need lr > 0, batch_size >= 1, epochs >= 0; got {self.lr}, {self.batch_size}, {self.epochs}")


@dataclass
class FusionTrainer:
    """Owns model, optimiser and loss history; ``run_epoch`` is resumable.

    Shuffling uses a generator seeded by (seed, epoch), so resuming from a
    checkpoint at epoch ``e`` replays exactly what an uninterrupted run does.
    """

    model: FusionTransformer
    train_cfg: TrainConfig
    seed: int = 0
    epoch: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    optimizer: Adam | None = None

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = Adam(self.model.parameters(), lr=self.train_cfg.lr, betas=(0.9, 0.999))

    def run_epoch(self, windows: list[FusionWindow], val_windows: list[FusionWindow] | None = None) -> float:
        cfg = self.model.cfg
        params = self.model.parameters()
        rng = np.random.default_rng([self.seed, self.epoch])
        order = rng.permutation(len(windows))
        total, count = 0.0, 0
        bs = self.train_cfg.batch_size
        for start in range(0, len(order), bs):
            batch = collate([windows[i] for i in order[start:start + bs]], cfg.variant, cfg.discretiser)
            teacher = batch.targets
            if self.train_cfg.teacher_noise > 0:
                teacher = teacher + rng.standard_normal(teacher.shape) * (
                    self.train_cfg.teacher_noise * self.model.target_std)
            pred = self.model.forward(batch, teacher)
            loss = fusion_loss(pred, batch.targets, cfg.rotation_weight, batch.query_valid)
            if not np.isfinite(loss.data):
                raise NumericalError(f"fusion loss diverged at epoch {self.epoch}")
            self.model.zero_grad()
            backward(loss, params)
            clip_grad_norm(params, self.train_cfg.clip_norm)
            self.optimizer.step()
            n = int(batch.query_valid.sum())
            total += loss.item() * n
            count += n
        self.train_loss.append(total / count)
        if val_windows:
            self.val_loss.append(evaluate_loss(self.model, val_windows, bs))
        self.epoch += 1
        log.debug("fusion epoch %d train %.5f", self.epoch, self.train_loss[-1])
        return self.train_loss[-1]


def evaluate_loss(model: FusionTransformer, windows: list[FusionWindow], batch_size: int = 32) -> float:
    cfg = model.cfg
    total, count = 0.0, 0
    for start in range(0, len(windows), batch_size):
        batch = collate(windows[start:start + batch_size], cfg.variant, cfg.discretiser)
        loss = fusion_loss(model.forward(batch), batch.targets, cfg.rotation_weight, batch.query_valid)
        n = int(batch.query_valid.sum())
        total += loss.item() * n
        count += n
    return total / count


def predict_windows(model: FusionTransformer, windows: list[FusionWindow], batch_size: int = 32) -> list[np.ndarray]:
    """Autoregressive predictions, one (U, 6) array per window."""
    cfg = model.cfg
    out = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        preds = model.infer(collate(chunk, cfg.variant, cfg.discretiser))
        out.extend(preds[b, :len(w.query_us)] for b, w in enumerate(chunk))
    return out


def init_fusion(windows: list[FusionWindow], aft_cfg: AftConfig, n_sources: int, seed: int = 0) -> FusionTransformer:
    """Fresh model with normalisation statistics fitted on ``windows``."""
    model = FusionTransformer(aft_cfg, n_sources, windows[0].payload.shape[1], seed)
    model.fit_normalisation(np.concatenate([w.payload for w in windows]),
                            np.concatenate([w.targets for w in windows]))
    return model


def train_fusion(windows: list[FusionWindow], aft_cfg: AftConfig, train_cfg: TrainConfig, *,
                 n_sources: int, seed: int = 0, val_windows: list[FusionWindow] | None = None,
                 ) -> FusionTrainer:
    trainer = FusionTrainer(init_fusion(windows, aft_cfg, n_sources, seed), train_cfg, seed)
    for _ in range(train_cfg.epochs):
        trainer.run_epoch(windows, val_windows)
    return trainer

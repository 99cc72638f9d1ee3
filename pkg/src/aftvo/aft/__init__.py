from .discretiser import DiscretiserConfig, WindowTooLongError, discretise, positional_encode, sinusoid_table
from .model import AftConfig, FusionTransformer, causal_mask, fusion_loss
from .train import FusionTrainer, TrainConfig, evaluate_loss, init_fusion, predict_windows, train_fusion
from .windows import (VARIANTS, FusionWindow, WindowBatch, canonical_variant, collate, make_windows,
                      query_grid, target_poses)


def ablation_variant(tag: str):
    """Constructor for the model variant named by ``tag`` (full, -D-Equi, -D-None, -SE or long names)."""
    variant = canonical_variant(tag)

    def build(cfg: AftConfig, n_sources: int, payload_dim: int, seed: int = 0) -> FusionTransformer:
        from dataclasses import replace
        return FusionTransformer(replace(cfg, variant=variant), n_sources, payload_dim, seed)
    return build

"""Diffusion-based mask-conditioned restoration: model, training, sampling."""

from .lora import AdaptedModel, LoraAdapter, attach_lora, merge_lora
from .model import (
    LORA_TARGETS,
    ToyDenoiser,
    forward_denoise,
    sinusoidal_embedding,
)
from .sampler import sample_inpaint
from .schedule import NoiseSchedule, q_sample
from .train import (
    FinetuneResult,
    LogRow,
    Regime,
    TrainConfig,
    TrainingPair,
    finetune,
    load_pairs,
    pretrain_backbone,
    write_training_log,
)

__all__ = [
    "AdaptedModel",
    "FinetuneResult",
    "LORA_TARGETS",
    "LogRow",
    "LoraAdapter",
    "NoiseSchedule",
    "Regime",
    "ToyDenoiser",
    "TrainConfig",
    "TrainingPair",
    "attach_lora",
    "finetune",
    "forward_denoise",
    "load_pairs",
    "merge_lora",
    "pretrain_backbone",
    "q_sample",
    "sample_inpaint",
    "sinusoidal_embedding",
    "write_training_log",
]

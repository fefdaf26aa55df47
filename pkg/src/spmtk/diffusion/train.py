"""Training loops: backbone pretraining and paired finetuning.

Pretraining teaches the backbone plain noise prediction on clean crops.
Finetuning then trains on artefact/clean pairs with the conditioning
branch active, under one of two regimes: a full retrain of every weight,
or adapter training that leaves the backbone and branch frozen and moves
only the low-rank adapters plus the fusion gates.  Pixels excluded by a
pair's ignore set contribute nothing to the loss or any gradient.  Every
loop is deterministic in its seed, and the held-out score trace decides
which checkpoint is the best one.
"""

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..errors import (
    EmptyManifestError,
    InsufficientDataError,
    MissingBackboneError,
)
from ..imageio import load_pgm, load_spmf, read_manifest
from ..metrics import masked_mse_metric, masked_psnr
from .lora import AdaptedModel, attach_lora
from .model import ToyDenoiser
from .sampler import sample_inpaint
from .schedule import NoiseSchedule, q_sample

FULL_LR_DEFAULT = 1.5e-3
LORA_LR_DEFAULT = 2e-4


class Regime(enum.Enum):
    FullRetrain = "full"
    LoraFinetune = "lora"


@dataclass(frozen=True)
class TrainConfig:
    regime: Regime = Regime.LoraFinetune
    lr: float | None = None
    warmup_steps: int = 100
    micro_batch: int = 1
    grad_accumulation: int = 1
    total_steps: int = 1000
    checkpoint_every: int = 250
    seed: int = 0
    weight_decay: float = 0.0
    heldout_stride: int = 20

    def __post_init__(self):
        if isinstance(self.regime, str):
            object.__setattr__(self, "regime", Regime(self.regime))
        if self.micro_batch < 1 or self.grad_accumulation < 1:
            raise ValueError("batch settings must be at least 1")
        if self.total_steps < 1 or self.checkpoint_every < 1:
            raise ValueError("step counts must be at least 1")

    @property
    def effective_batch(self):
        return self.micro_batch * self.grad_accumulation

    def resolved_lr(self):
        if self.lr is not None:
            return self.lr
        return (FULL_LR_DEFAULT if self.regime is Regime.FullRetrain
                else LORA_LR_DEFAULT)


@dataclass
class LogRow:
    step: int
    lr: float
    train_loss: float
    heldout_psnr: float | None = None
    heldout_mse: float | None = None


def write_training_log(path, rows):
    """Write log rows as CSV; held-out columns stay blank off checkpoints."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["step", "lr", "train_loss", "heldout_psnr", "heldout_mse"])
        for r in rows:
            out.writerow([
                r.step,
                "%.10g" % r.lr,
                "%.10g" % r.train_loss,
                "" if r.heldout_psnr is None else "%.10g" % r.heldout_psnr,
                "" if r.heldout_mse is None else "%.10g" % r.heldout_mse,
            ])


@dataclass
class TrainingPair:
    id: str
    clean: np.ndarray
    corrupted: np.ndarray
    mask: np.ndarray
    omega: np.ndarray | None = None


def load_pairs(dataset_dir, split="train"):
    """Read a generated pair dataset into memory as TrainingPair records."""
    base = Path(dataset_dir)
    entries = [e for e in read_manifest(base / "manifest.jsonl")
               if e.split == split]
    pairs = []
    for e in entries:
        clean = load_spmf(base / e.clean_path).pixels.astype(np.float64)
        corrupted = load_spmf(base / e.artefact_path).pixels.astype(np.float64)
        mask = load_pgm(base / e.mask_path).bits
        omega = None
        if e.ignore_path:
            omega = load_pgm(base / e.ignore_path).bits
        pairs.append(TrainingPair(id=e.id, clean=clean, corrupted=corrupted,
                                  mask=mask, omega=omega))
    return pairs


def _backbone_params(model):
    return [p for name, p in model.params.items() if name.startswith("bb.")]


def _trainable_for(model, regime):
    if regime is Regime.FullRetrain:
        if isinstance(model, AdaptedModel):
            raise ValueError("full retrain expects an unadapted model")
        return list(model.params.values())
    params = list(model.trainable_params())
    for i in range(4):
        params.append(model.params["gate%d.w" % i])
        params.append(model.params["gate%d.b" % i])
    return params


def pretrain_backbone(crops, steps, config=None, schedule=None):
    """Teach the backbone noise prediction on clean crops.

    crops: sequence of 2-D arrays in [0, 1], at least 32 of them.  Returns
    (weights, log) where weights maps every model parameter name to its
    final array and log holds one LogRow per step.  Deterministic in
    config.seed.
    """
    config = config or TrainConfig(regime=Regime.FullRetrain,
                                   total_steps=steps)
    schedule = schedule or NoiseSchedule()
    crops = [np.asarray(c, dtype=np.float64) for c in crops]
    if len(crops) < 32:
        raise InsufficientDataError(
            "need at least 32 clean crops, got %d" % len(crops))
    model = ToyDenoiser(seed=config.seed)
    params = _backbone_params(model)
    lr_sched = ad.LrSchedule(ad.ScheduleKind.ConstantWarmup,
                             min(config.warmup_steps, steps), steps,
                             config.lr if config.lr is not None else FULL_LR_DEFAULT)
    opt = ad.AdamW(params, lr=lr_sched.base_lr,
                   weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    nsamp = config.effective_batch
    full = None
    log = []
    for step in range(steps):
        opt.zero_grad()
        total = 0.0
        for _ in range(nsamp):
            crop = crops[int(rng.integers(len(crops)))]
            if full is None or full.shape != crop.shape:
                full = np.ones(crop.shape, dtype=bool)
            t = int(rng.integers(schedule.T))
            eps = rng.standard_normal(crop.shape)
            x_t = q_sample(2.0 * crop - 1.0, t, eps, schedule)
            eps_hat = model.forward(x_t[None, None], np.array([t]))
            loss = ad.scale(
                ad.masked_mse(eps_hat, eps[None, None], full), 1.0 / nsamp)
            loss.backward()
            total += loss.item()
        lr = ad.lr_at(lr_sched, step)
        opt.step(lr)
        log.append(LogRow(step=step, lr=lr, train_loss=total))
    return model.weight_arrays(), log


def _heldout_eval(model, pairs, schedule, stride, seed):
    """Mean masked PSNR/MSE of strided sampling over the held-out pairs."""
    psnrs = []
    mses = []
    for i, pair in enumerate(pairs):
        restored = sample_inpaint(model, pair.corrupted.astype(np.float32),
                                  pair.mask, schedule,
                                  seed=int(np.random.default_rng(
                                      np.random.SeedSequence([seed, 7700, i])
                                  ).integers(2 ** 31)),
                                  stride=stride)
        score_mask = pair.mask if pair.omega is None else (pair.mask & pair.omega)
        psnrs.append(masked_psnr(restored, pair.clean.astype(np.float32),
                                 score_mask))
        mses.append(masked_mse_metric(restored, pair.clean.astype(np.float32),
                                      score_mask))
    return float(np.mean(psnrs)), float(np.mean(mses))


def _snapshot(model):
    if isinstance(model, AdaptedModel):
        named = model.base.weight_arrays()
        for target, adapter in model.adapters.items():
            named["lora.%s.A" % target] = adapter.A.data.copy()
            named["lora.%s.B" % target] = adapter.B.data.copy()
        return named
    return model.weight_arrays()


@dataclass
class FinetuneResult:
    best_weights: dict
    final_weights: dict
    best_step: int
    best_psnr: float
    best_mse: float
    log: list


def finetune(model, pairs, regime=None, config=None, schedule=None):
    """Train on artefact/clean pairs; returns weights plus the score trace.

    Held-out pairs (every fifth) are scored at each checkpoint with the
    strided sampler; the best checkpoint is the one with peak held-out
    masked PSNR, ties broken by lower masked MSE.  Under the adapter
    regime only adapters and gates move; the backbone and branch stay
    bit-identical.
    """
    config = config or TrainConfig()
    if regime is not None and regime is not config.regime:
        config = replace(config, regime=regime)
    schedule = schedule or NoiseSchedule()
    pairs = list(pairs)
    if not pairs:
        raise EmptyManifestError("no training pairs supplied")
    if not model.is_trained():
        raise MissingBackboneError("backbone must be pretrained before finetuning")
    if config.regime is Regime.LoraFinetune and not isinstance(model, AdaptedModel):
        model = attach_lora(model, seed=config.seed)

    heldout = pairs[::5]
    train_pairs = [p for i, p in enumerate(pairs) if i % 5] or list(heldout)

    params = _trainable_for(model, config.regime)
    kind = (ad.ScheduleKind.ConstantWarmup
            if config.regime is Regime.FullRetrain
            else ad.ScheduleKind.CosineWarmup)
    lr_sched = ad.LrSchedule(kind, min(config.warmup_steps, config.total_steps),
                             config.total_steps, config.resolved_lr())
    opt = ad.AdamW(params, lr=lr_sched.base_lr,
                   weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    nsamp = config.effective_batch

    log = []
    best = None
    for step in range(config.total_steps):
        opt.zero_grad()
        total = 0.0
        for _ in range(nsamp):
            pair = train_pairs[int(rng.integers(len(train_pairs)))]
            t = int(rng.integers(schedule.T))
            eps = rng.standard_normal(pair.clean.shape)
            x0s = 2.0 * pair.clean - 1.0
            x_t = q_sample(x0s, t, eps, schedule)
            cond = x0s * (1.0 - pair.mask)
            eps_hat = model.forward(x_t[None, None], np.array([t]),
                                    cond[None, None],
                                    pair.mask.astype(np.float64)[None, None])
            omega = np.ones(pair.clean.shape, bool) if pair.omega is None else pair.omega
            loss = ad.scale(ad.masked_mse(eps_hat, eps[None, None], omega),
                            1.0 / nsamp)
            loss.backward()
            total += loss.item()
        lr = ad.lr_at(lr_sched, step)
        opt.step(lr)
        row = LogRow(step=step, lr=lr, train_loss=total)
        if (step + 1) % config.checkpoint_every == 0 or step + 1 == config.total_steps:
            psnr, mse = _heldout_eval(model, heldout, schedule,
                                      config.heldout_stride, config.seed)
            row.heldout_psnr = psnr
            row.heldout_mse = mse
            if (best is None or psnr > best[1]
                    or (psnr == best[1] and mse < best[2])):
                best = (step, psnr, mse, _snapshot(model))
        log.append(row)
    return FinetuneResult(best_weights=best[3], final_weights=_snapshot(model),
                          best_step=best[0], best_psnr=best[1],
                          best_mse=best[2], log=log)

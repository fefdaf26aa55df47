"""Low-rank adapters over convolution weights.

An adapter factors an additive update to a conv kernel W (O, C, k, k) as
scale * B @ A with A (r x CKK) drawn from a small gaussian and B (O x r)
starting at exact zero, so a freshly attached adapter changes nothing.
Adapted forward passes compose W + scale*(B@A) on the tape, training only
A and B; merging folds the update into plain weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import DuplicateAdapterError, UnknownTargetError
from .model import LORA_TARGETS, ToyDenoiser

A_INIT_SIGMA = 0.01


@dataclass
class LoraAdapter:
    target: str
    A: ad.Tensor
    B: ad.Tensor
    rank: int
    alpha: float
    scale: float = field(init=False)

    def __post_init__(self):
        self.scale = self.alpha / self.rank


class AdaptedModel:
    """A base model plus adapters; behaves like the model in forward calls."""

    def __init__(self, base, adapters):
        self.base = base
        self.adapters = dict(adapters)

    @property
    def w(self):
        return self.base.w

    @property
    def params(self):
        return self.base.params

    def is_trained(self):
        return self.base.is_trained()

    def trainable_params(self):
        out = []
        for adapter in self.adapters.values():
            out.append(adapter.A)
            out.append(adapter.B)
        return out

    def trainable_count(self):
        return sum(p.size for p in self.trainable_params())

    def total_count(self):
        return self.base.parameter_counts()["total"] + self.trainable_count()

    def trainable_fraction(self):
        return self.trainable_count() / self.total_count()

    def effective_weights(self):
        wd = dict(self.base.params)
        for target, adapter in self.adapters.items():
            w0 = wd[target]
            delta = ad.reshape(ad.matmul2d(adapter.B, adapter.A), w0.data.shape)
            wd[target] = ad.add(w0, ad.scale(delta, adapter.scale))
        return wd

    def forward(self, x_t, t, masked=None, mask=None):
        return self.base.forward(x_t, t, masked=masked, mask=mask,
                                 weights=self.effective_weights())


def attach_lora(model, targets=LORA_TARGETS, r=8, alpha=8, seed=0):
    """Wrap a model with low-rank adapters on the named conv weights.

    Returns an AdaptedModel whose forward output is initially identical to
    the unadapted model's (B starts at zero).  Attaching twice to one
    weight is refused.
    """
    if isinstance(model, AdaptedModel):
        base, existing = model.base, dict(model.adapters)
    else:
        base, existing = model, {}
    rng = np.random.default_rng(seed)
    for target in targets:
        if target in existing:
            raise DuplicateAdapterError("adapter already attached to %r" % target)
        if target not in base.params:
            raise UnknownTargetError("no weight named %r" % target)
        w0 = base.params[target]
        if w0.data.ndim != 4:
            raise UnknownTargetError("%r is not a convolution kernel" % target)
        o, c, kh, kw = w0.data.shape
        a = ad.Tensor(rng.standard_normal((r, c * kh * kw)) * A_INIT_SIGMA,
                      requires_grad=True)
        b = ad.Tensor(np.zeros((o, r)), requires_grad=True)
        existing[target] = LoraAdapter(target=target, A=a, B=b, rank=r,
                                       alpha=float(alpha))
    return AdaptedModel(base, existing)


def merge_lora(model):
    """Fold adapters into plain weights; a plain model passes through as-is."""
    if not isinstance(model, AdaptedModel):
        return model
    merged = ToyDenoiser.from_weights(model.base.weight_arrays(), w=model.base.w)
    for target, adapter in model.adapters.items():
        delta = adapter.scale * (adapter.B.data @ adapter.A.data)
        merged.params[target].data += delta.reshape(merged.params[target].data.shape)
    return merged

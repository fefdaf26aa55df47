"""Dual-branch convolutional noise predictor.

The backbone is a small two-level residual encoder-decoder (16 channels at
full resolution, 32 at half) that maps a noisy single-channel image plus a
sinusoidal timestep embedding to predicted noise.  A structurally identical
conditioning branch ingests (noisy image, masked image, mask) as three
channels and feeds its features into the backbone at four sites through
1x1 convolution gates.  Gates and the output head start at exact zero, so a
freshly built model's dual-branch output is bit-identical to the backbone
alone, and its noise prediction is identically zero.
"""

import numpy as np

from .. import autodiff as ad
from ..errors import MissingFieldError, ShapeMismatchError

TEMB_DIM = 32
BASE_CHANNELS = 16
MID_CHANNELS = 32
PRESERVE_DEFAULT = 0.8

# Gate input/output channel width per injection site: after the first
# encoder block, after the second encoder block, after the mid block, and
# after the decoder block.
_SITE_CHANNELS = (BASE_CHANNELS, MID_CHANNELS, MID_CHANNELS, BASE_CHANNELS)

# Adapter attachment points: early branch context, branch global mixing,
# late branch refinement, and all four fusion gates.
LORA_TARGETS = (
    "br.stem.w",
    "br.mid.c1.w",
    "br.dec1.c2.w",
    "gate0.w",
    "gate1.w",
    "gate2.w",
    "gate3.w",
)


def sinusoidal_embedding(t, dim=TEMB_DIM):
    """Classic sin/cos position encoding of integer timesteps, shape (N, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _conv_spec(in_ch, out_ch, k):
    return (out_ch, in_ch, k, k)


def _net_specs(in_ch):
    """Ordered (name, shape) weight layout of one trunk with a given stem width."""
    c, m = BASE_CHANNELS, MID_CHANNELS
    return [
        ("stem.w", _conv_spec(in_ch, c, 3)), ("stem.b", (c,)),
        ("temb.w", (c, TEMB_DIM)), ("temb.b", (c,)),
        ("enc1.c1.w", _conv_spec(c, c, 3)), ("enc1.c1.b", (c,)),
        ("enc1.c2.w", _conv_spec(c, c, 3)), ("enc1.c2.b", (c,)),
        ("down.w", _conv_spec(c, m, 3)), ("down.b", (m,)),
        ("enc2.c1.w", _conv_spec(m, m, 3)), ("enc2.c1.b", (m,)),
        ("enc2.c2.w", _conv_spec(m, m, 3)), ("enc2.c2.b", (m,)),
        ("mid.c1.w", _conv_spec(m, m, 3)), ("mid.c1.b", (m,)),
        ("mid.c2.w", _conv_spec(m, m, 3)), ("mid.c2.b", (m,)),
        ("up.w", _conv_spec(m, c, 3)), ("up.b", (c,)),
        ("dec1.c1.w", _conv_spec(c, c, 3)), ("dec1.c1.b", (c,)),
        ("dec1.c2.w", _conv_spec(c, c, 3)), ("dec1.c2.b", (c,)),
    ]


def _weight_specs():
    specs = []
    for name, shape in _net_specs(1):
        specs.append(("bb." + name, shape))
    specs.append(("bb.head.w", _conv_spec(BASE_CHANNELS, 1, 3)))
    specs.append(("bb.head.b", (1,)))
    for name, shape in _net_specs(3):
        specs.append(("br." + name, shape))
    for i, ch in enumerate(_SITE_CHANNELS):
        specs.append(("gate%d.w" % i, _conv_spec(ch, ch, 1)))
        specs.append(("gate%d.b" % i, (ch,)))
    return specs


class ToyDenoiser:
    """Noise predictor with a frozen-able backbone and a gated mask branch."""

    def __init__(self, seed=0, w=PRESERVE_DEFAULT):
        self.w = float(w)
        rng = np.random.default_rng(seed)
        self.params = {}
        for name, shape in _weight_specs():
            if name.startswith("gate") or name.startswith("bb.head"):
                data = np.zeros(shape)
            elif name.endswith(".b"):
                data = np.zeros(shape)
            elif len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
                data = rng.standard_normal(shape) / np.sqrt(fan_in)
            else:
                data = rng.standard_normal(shape) / np.sqrt(shape[1])
            self.params[name] = ad.Tensor(data, requires_grad=True)

    @classmethod
    def from_weights(cls, named, w=PRESERVE_DEFAULT):
        """Rebuild a model from a {name: array} checkpoint dictionary."""
        model = cls(seed=0, w=w)
        for name, p in model.params.items():
            if name not in named:
                raise MissingFieldError("checkpoint lacks weight %r" % name)
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeMismatchError(
                    "weight %r has shape %s, expected %s"
                    % (name, arr.shape, p.data.shape)
                )
            p.data = arr.copy()
        return model

    def weight_arrays(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def parameter_counts(self):
        counts = {"backbone": 0, "branch": 0, "gates": 0}
        for name, p in self.params.items():
            if name.startswith("bb."):
                counts["backbone"] += p.size
            elif name.startswith("br."):
                counts["branch"] += p.size
            else:
                counts["gates"] += p.size
        counts["total"] = sum(counts.values())
        return counts

    def is_trained(self):
        """A model whose head never moved off its zero init predicts nothing."""
        return bool(self.params["bb.head.w"].data.any()
                    or self.params["bb.head.b"].data.any())

    # -- forward ----------------------------------------------------------

    def _res(self, wd, x, name):
        h = ad.conv2d(x, wd[name + ".c1.w"], wd[name + ".c1.b"])
        h = ad.silu(h)
        h = ad.conv2d(h, wd[name + ".c2.w"], wd[name + ".c2.b"])
        return ad.add(x, h)

    def _trunk(self, wd, prefix, x, temb, inject):
        h = ad.conv2d(x, wd[prefix + "stem.w"], wd[prefix + "stem.b"])
        h = ad.add_chan(h, ad.linear(temb, wd[prefix + "temb.w"],
                                     wd[prefix + "temb.b"]))
        h = ad.silu(h)
        h = inject(0, self._res(wd, h, prefix + "enc1"))
        h = ad.silu(ad.conv2d(h, wd[prefix + "down.w"], wd[prefix + "down.b"],
                              stride=2))
        h = inject(1, self._res(wd, h, prefix + "enc2"))
        h = inject(2, self._res(wd, h, prefix + "mid"))
        h = ad.silu(ad.conv2d(ad.nearest_upsample2(h), wd[prefix + "up.w"],
                              wd[prefix + "up.b"]))
        h = inject(3, self._res(wd, h, prefix + "dec1"))
        return h

    def forward(self, x_t, t, masked=None, mask=None, weights=None):
        """Predict the noise in x_t (N, 1, H, W) at integer timesteps t (N,).

        With masked and mask given (each (N, 1, H, W)), the conditioning
        branch runs and its gated features are added into the backbone
        stream, scaled by the preservation factor.  Without them only the
        backbone runs.  Returns a Tensor of x_t's shape.
        """
        wd = self.params if weights is None else weights
        x = x_t if isinstance(x_t, ad.Tensor) else ad.Tensor(x_t)
        if x.data.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatchError("x_t must have shape (N, 1, H, W)")
        n, _, h, wid = x.shape
        if h % 2 or wid % 2:
            raise ShapeMismatchError("spatial size must be even for down/up pairing")
        t = np.atleast_1d(np.asarray(t))
        if t.shape != (n,):
            raise ShapeMismatchError("t must supply one timestep per sample")
        temb = ad.Tensor(sinusoidal_embedding(t))

        if (masked is None) != (mask is None):
            raise ShapeMismatchError("masked and mask must be given together")
        if masked is not None:
            mdat = masked.data if isinstance(masked, ad.Tensor) else np.asarray(masked)
            kdat = mask.data if isinstance(mask, ad.Tensor) else np.asarray(mask)
            if mdat.shape != x.data.shape or kdat.shape != x.data.shape:
                raise ShapeMismatchError("masked and mask must match x_t's shape")
            bin_ = ad.Tensor(np.concatenate(
                [x.data, np.asarray(mdat, dtype=np.float64),
                 np.asarray(kdat, dtype=np.float64)], axis=1))
            feats = []

            def record(_, value):
                feats.append(value)
                return value

            self._trunk(wd, "br.", bin_, temb, record)

            def inject(site, value):
                gate = ad.conv2d(feats[site], wd["gate%d.w" % site],
                                 wd["gate%d.b" % site])
                return ad.add(value, ad.scale(gate, self.w))
        else:
            def inject(_, value):
                return value

        trunk = self._trunk(wd, "bb.", x, temb, inject)
        return ad.conv2d(trunk, wd["bb.head.w"], wd["bb.head.b"])


def forward_denoise(model, x_t, t, masked=None, mask=None):
    """Functional wrapper over the model's forward pass."""
    return model.forward(x_t, t, masked=masked, mask=mask)

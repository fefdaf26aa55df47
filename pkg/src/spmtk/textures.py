"""Synthetic clean-surface generator.

Produces smooth height maps in a few families (gaussian bump fields, warped
stripe patterns, terraced steps) for pretraining corpora and self-contained
benchmarks. Everything is deterministic in the seed.
"""

from __future__ import annotations

import numpy as np

from .imageio import Channel, ScanFrame

TEXTURE_KINDS = ("bumps", "stripes", "terraces")


def _fourier_field(h: int, w: int, rng, n_waves: int = 8,
                   max_freq: float = 3.0) -> np.ndarray:
    """Sum of random low-frequency plane waves, roughly zero-mean."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    field = np.zeros((h, w))
    for _ in range(n_waves):
        fy, fx = rng.uniform(-max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        field += amp * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return field


def make_texture_frame(size: int, seed: int, kind: str | None = None,
                       scan_size: float = 1.0, z_scale: float = 5.0) -> ScanFrame:
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = TEXTURE_KINDS[int(rng.integers(len(TEXTURE_KINDS)))]
    h = w = int(size)
    if kind == "bumps":
        field = np.zeros((h, w))
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        for _ in range(int(rng.integers(4, 10))):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sig = rng.uniform(0.08, 0.25) * size
            amp = rng.uniform(0.4, 1.0) * (1 if rng.random() < 0.7 else -1)
            field += amp * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2)
                                    / (2 * sig ** 2)))
        field += 0.15 * _fourier_field(h, w, rng, n_waves=4)
    elif kind == "stripes":
        base = _fourier_field(h, w, rng, n_waves=2, max_freq=1.5)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, 5.0)
        coord = (np.cos(theta) * xx + np.sin(theta) * yy) / size
        field = np.sin(2 * np.pi * freq * coord + 1.5 * base)
    elif kind == "terraces":
        field = _fourier_field(h, w, rng, n_waves=5, max_freq=2.0)
        levels = int(rng.integers(3, 7))
        lo, hi = field.min(), field.max()
        normalized = (field - lo) / (hi - lo + 1e-12)
        stepped = np.floor(normalized * levels) / levels
        # soften terrace edges a touch so gradients stay finite-ish
        field = 0.85 * stepped + 0.15 * normalized
    else:
        raise ValueError(f"unknown texture kind {kind!r}")

    lo, hi = field.min(), field.max()
    px = 0.05 + 0.9 * (field - lo) / (hi - lo + 1e-12)
    return ScanFrame(w, h, Channel.Height, scan_size, z_scale,
                     px.astype(np.float32))


def make_texture_corpus(count: int, size: int, seed: int,
                        kinds=TEXTURE_KINDS) -> list[ScanFrame]:
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        frames.append(make_texture_frame(size, int(rng.integers(0, 2 ** 31)),
                                         kind=kind))
    return frames

"""Masked-region image quality metrics.

All metrics operate on the normalized [0,1] domain (MAX = 1) and are averaged
over the masked pixels only. Masked sums use math.fsum, which is correctly
rounded and therefore invariant under pixel reordering — row-permutation
equivariance of MSE/PSNR is exact, not approximate.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyMaskError,
    FrameTooSmallError,
    MismatchedDimensionsError,
)
from .imageio import MaskImage, ScanFrame


def _as_image(x) -> np.ndarray:
    if isinstance(x, ScanFrame):
        return x.pixels.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _as_bits(mask) -> np.ndarray:
    if isinstance(mask, MaskImage):
        return mask.bits
    return np.asarray(mask, dtype=bool)


def _check(restored, truth, mask):
    r = _as_image(restored)
    t = _as_image(truth)
    m = _as_bits(mask)
    if r.shape != t.shape or r.shape != m.shape:
        raise MismatchedDimensionsError(
            f"shapes differ: {r.shape}, {t.shape}, {m.shape}")
    if not m.any():
        raise EmptyMaskError("metric mask is empty")
    return r, t, m


def masked_mse_metric(restored, truth, mask) -> float:
    r, t, m = _check(restored, truth, mask)
    diff = r[m] - t[m]
    return math.fsum((diff * diff).tolist()) / diff.size


def masked_psnr(restored, truth, mask, cap: float = 100.0) -> float:
    mse = masked_mse_metric(restored, truth, mask)
    if mse < 1e-10:
        return cap
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    xs = np.arange(window, dtype=np.float64) - half
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _local_moments(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local mean with boundary weights renormalized over
    the in-bounds support (zero-pad then divide by the window's weight mass).
    """
    num = ndimage.convolve1d(img, kernel, axis=0, mode="constant", cval=0.0)
    num = ndimage.convolve1d(num, kernel, axis=1, mode="constant", cval=0.0)
    ones = np.ones_like(img)
    den = ndimage.convolve1d(ones, kernel, axis=0, mode="constant", cval=0.0)
    den = ndimage.convolve1d(den, kernel, axis=1, mode="constant", cval=0.0)
    return num / den


def ssim_map(x, y, window: int = 11, sigma: float = 1.5,
             K1: float = 0.01, K2: float = 0.03, L: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM with Gaussian-weighted local statistics."""
    x = _as_image(x)
    y = _as_image(y)
    if x.shape != y.shape:
        raise MismatchedDimensionsError(f"shapes differ: {x.shape} vs {y.shape}")
    h, w = x.shape
    if h < window or w < window:
        raise FrameTooSmallError(
            f"frame {w}x{h} smaller than SSIM window {window}")
    C1 = (K1 * L) ** 2
    C2 = (K2 * L) ** 2
    k = _gaussian_kernel(window, sigma)
    mu_x = _local_moments(x, k)
    mu_y = _local_moments(y, k)
    e_xx = _local_moments(x * x, k)
    e_yy = _local_moments(y * y, k)
    e_xy = _local_moments(x * y, k)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + C1) * (2.0 * cov + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (var_x + var_y + C2)
    return num / den


def masked_ssim(restored, truth, mask, window: int = 11, sigma: float = 1.5,
                K1: float = 0.01, K2: float = 0.03, L: float = 1.0) -> float:
    m = _as_bits(mask)
    if not m.any():
        raise EmptyMaskError("metric mask is empty")
    smap = ssim_map(restored, truth, window=window, sigma=sigma,
                    K1=K1, K2=K2, L=L)
    if smap.shape != m.shape:
        raise MismatchedDimensionsError("mask shape differs from frames")
    vals = smap[m]
    return math.fsum(vals.tolist()) / vals.size


@dataclasses.dataclass(frozen=True)
class MaskedScore:
    psnr_db: float
    mse: float
    ssim: float
    masked_pixels: int


def score_restoration(restored, truth, mask) -> MaskedScore:
    mse = masked_mse_metric(restored, truth, mask)
    psnr = 100.0 if mse < 1e-10 else 10.0 * math.log10(1.0 / mse)
    ssim = masked_ssim(restored, truth, mask)
    return MaskedScore(psnr_db=psnr, mse=mse, ssim=ssim,
                       masked_pixels=int(_as_bits(mask).sum()))

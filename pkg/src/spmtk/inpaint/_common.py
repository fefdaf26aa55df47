"""Shared grid helpers for the hole-filling baselines.

All methods operate on float64 copies internally and write their result back
into a float32 frame, touching masked pixels only, so unmasked pixels survive
every method bit-for-bit.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_dilation

from ..errors import (
    EmptyMaskError,
    MaskTouchesEntireFrameError,
    MismatchedDimensionsError,
)
from ..imageio import MaskImage, ScanFrame


def as_pixels(frame):
    """Return the float64 pixel array behind a ScanFrame or bare array."""
    if isinstance(frame, ScanFrame):
        return np.asarray(frame.pixels, dtype=np.float64)
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise MismatchedDimensionsError("expected a 2-d pixel array")
    return arr


def as_bits(mask):
    """Return the boolean mask array behind a MaskImage or bare array."""
    if isinstance(mask, MaskImage):
        return mask.bits
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise MismatchedDimensionsError("expected a 2-d mask array")
    return arr.astype(bool)


def check_pair(frame, mask):
    """Validate a frame/mask pair, returning (float64 pixels, bool bits).

    Raises MismatchedDimensionsError on shape disagreement, EmptyMaskError
    when there is nothing to fill and MaskTouchesEntireFrameError when no
    known pixel remains to fill from.
    """
    pixels = as_pixels(frame)
    bits = as_bits(mask)
    if pixels.shape != bits.shape:
        raise MismatchedDimensionsError(
            f"mask shape {bits.shape} does not match frame shape {pixels.shape}"
        )
    if not bits.any():
        raise EmptyMaskError("mask selects no pixels")
    if bits.all():
        raise MaskTouchesEntireFrameError(
            "mask covers the whole frame; no known pixels to fill from"
        )
    return pixels, bits


def put_result(frame, bits, grid):
    """Write `grid` values into masked positions of a copy of `frame`.

    Values are clamped to [0,1] and rounded to float32; unmasked pixels are
    copied straight from the input and therefore stay bit-identical.
    """
    filled = np.clip(grid, 0.0, 1.0).astype(np.float32)
    if isinstance(frame, ScanFrame):
        out = frame.pixels.copy()
        out[bits] = filled[bits]
        return frame.with_pixels(out)
    out = np.array(frame, dtype=np.float32, copy=True)
    out[bits] = filled[bits]
    return out


def laplacian(u):
    """Five-point Laplacian with replicate edges.

    Out-of-frame neighbours duplicate the edge pixel, which makes the
    operator the (negated) graph Laplacian of the grid: symmetric, with
    degree-3 rows along edges and degree-2 rows at corners.
    """
    p = np.pad(u, 1, mode="edge")
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
            - 4.0 * u)


def grad_central(u):
    """Central-difference gradient (d/dy, d/dx) with replicate edges."""
    p = np.pad(u, 1, mode="edge")
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    return gy, gx


def chebyshev_ring(bits, width=2):
    """Known pixels within Chebyshev distance `width` of the masked set."""
    size = 2 * width + 1
    grown = binary_dilation(bits, structure=np.ones((size, size), dtype=bool))
    return grown & ~bits

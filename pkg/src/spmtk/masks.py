"""Mask production and refinement.

Covers phase-threshold extraction, the surface-contrast physics filter,
morphological cleanup, a robust row-dropout detector, the loss ignore-set
combination, and the random mask sampler used to build training pairs.

Phase convention: phase frames store normalized values where 0.5 maps to
0 degrees, so a pixel's phase in degrees is (pixel - 0.5) * z_scale. A frame
holding raw phase in [-90, 90] normalized over its full range has z_scale 180
and satisfies this automatically.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyMaskError,
    MismatchedDimensionsError,
    SpmError,
    WrongChannelError,
)
from .imageio import Channel, MaskImage, ScanFrame


class Verdict(enum.Enum):
    Accept = "accept"
    Discard = "discard"


def phase_degrees(frame: ScanFrame) -> np.ndarray:
    """Denormalize a phase frame to signed degrees (0.5 -> 0 deg)."""
    if frame.channel != Channel.Phase:
        raise WrongChannelError(f"expected Phase frame, got {frame.channel.name}")
    return (frame.pixels.astype(np.float64) - 0.5) * frame.z_scale


def phase_threshold_mask(phase_frame: ScanFrame, lo_deg: float = 85.0,
                         hi_deg: float = 90.0) -> MaskImage:
    """Mask every pixel whose absolute phase is at least lo_deg (inclusive).

    hi_deg documents the upper edge of the reporting band; the comparison
    itself uses only lo_deg.
    """
    if not (0.0 < lo_deg <= hi_deg):
        raise SpmError(f"bad threshold band [{lo_deg}, {hi_deg}]")
    deg = phase_degrees(phase_frame)
    return MaskImage(phase_frame.width, phase_frame.height,
                     np.abs(deg) >= lo_deg)


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def surface_delta_h(mask: MaskImage, height_frame: ScanFrame) -> float:
    """Max-min physical height (nm) over the mask interior plus a 2-pixel
    (Chebyshev) dilated ring around it."""
    if mask.count == 0:
        raise EmptyMaskError("delta-h needs a nonempty mask")
    if height_frame.channel != Channel.Height:
        raise WrongChannelError(
            f"expected Height frame, got {height_frame.channel.name}")
    if (mask.height, mask.width) != (height_frame.height, height_frame.width):
        raise MismatchedDimensionsError("mask and frame dimensions differ")
    region = ndimage.binary_dilation(mask.bits, structure=_square(2))
    heights = height_frame.pixels[region].astype(np.float64) * height_frame.z_scale
    return float(heights.max() - heights.min())


def physics_filter(mask: MaskImage, height_frame: ScanFrame,
                   delta_h_nm: float = 0.2) -> Verdict:
    """Discard masks sitting on negligible surface contrast."""
    delta_h = surface_delta_h(mask, height_frame)
    return Verdict.Discard if delta_h < delta_h_nm else Verdict.Accept


def morph_cleanup(mask: MaskImage, open_radius: int = 1,
                  min_area: int = 4) -> MaskImage:
    """Morphological open with a square element, then drop small components."""
    if open_radius < 0 or min_area < 0:
        raise SpmError("radii must be nonnegative")
    bits = mask.bits
    if open_radius > 0 and bits.any():
        se = _square(open_radius)
        bits = ndimage.binary_erosion(bits, structure=se)
        bits = ndimage.binary_dilation(bits, structure=se)
    if min_area > 1 and bits.any():
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        labels, n = ndimage.label(bits, structure=four)
        if n:
            keep = np.flatnonzero(np.bincount(labels.ravel())[1:] >= min_area) + 1
            bits = np.isin(labels, keep)
    return MaskImage(mask.width, mask.height, bits)


def detect_line_dropout_rows(frame: ScanFrame, z_thresh: float = 3.5,
                             window: int = 4) -> MaskImage:
    """Flag whole rows whose median is a robust outlier among its neighbors.

    Each row's median is compared against the median of the row-medians in a
    +/- `window` neighborhood (the row itself excluded); deviations are scaled
    by 1.4826 * MAD over all rows.
    """
    h, w = frame.height, frame.width
    if h < 8:
        raise SpmError("row detector needs at least 8 rows")
    med = np.median(frame.pixels.astype(np.float64), axis=1)
    dev = np.empty(h)
    for i in range(h):
        lo = max(0, i - window)
        hi = min(h, i + window + 1)
        neighbors = np.concatenate([med[lo:i], med[i + 1:hi]])
        dev[i] = abs(med[i] - np.median(neighbors))
    scale = 1.4826 * np.median(dev) + 1e-12
    rows = dev / scale > z_thresh
    bits = np.zeros((h, w), dtype=bool)
    bits[rows, :] = True
    return MaskImage(w, h, bits)


@dataclasses.dataclass(frozen=True)
class IgnoreSet:
    """Pixels participating in loss/metric evaluation (True = counted)."""
    omega: MaskImage


def compute_ignore_set(M: MaskImage, A: MaskImage) -> IgnoreSet:
    """Omega = (not M) union (M minus A): real-artefact pixels inside the
    inpainting mask are excluded from loss and metrics."""
    if (M.height, M.width) != (A.height, A.width):
        raise MismatchedDimensionsError("M and A dimensions differ")
    omega = ~M.bits | (M.bits & ~A.bits)
    return IgnoreSet(MaskImage(M.width, M.height, omega))


# ---------------------------------------------------------------------------
# Random mask sampler
# ---------------------------------------------------------------------------

MASK_SHAPE_FAMILIES = ("rows", "bands", "disks", "blobs")


def _disk_bits(h: int, w: int, cy: int, cx: int, radius: int) -> np.ndarray:
    yy, xx = np.ogrid[:h, :w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def sample_random_masks(frame_dims, count: int, seed: int,
                        shape_library=MASK_SHAPE_FAMILIES,
                        return_kinds: bool = False):
    """Draw `count` random masks for a (width, height) frame.

    Shape families: single scattered rows, contiguous row bands, filled disks,
    and free-form blobs (a short random walk stamped with small disks). The
    family is drawn uniformly per mask; every mask is nonempty.
    """
    w, h = int(frame_dims[0]), int(frame_dims[1])
    if count < 1:
        raise SpmError("count must be >= 1")
    if h < 4 or w < 4:
        raise SpmError("frame too small to sample masks")
    rng = np.random.default_rng(seed)
    masks: list[MaskImage] = []
    kinds: list[str] = []
    for _ in range(count):
        kind = shape_library[int(rng.integers(len(shape_library)))]
        bits = np.zeros((h, w), dtype=bool)
        if kind == "rows":
            n = int(rng.integers(1, 4))
            rows = rng.choice(h, size=min(n, h), replace=False)
            bits[rows, :] = True
        elif kind == "bands":
            height = int(rng.integers(2, max(3, h // 6) + 1))
            r0 = int(rng.integers(0, h - height + 1))
            bits[r0:r0 + height, :] = True
        elif kind == "disks":
            radius = int(rng.integers(2, max(3, min(h, w) // 5) + 1))
            cy = int(rng.integers(0, h))
            cx = int(rng.integers(0, w))
            bits = _disk_bits(h, w, cy, cx, radius)
        elif kind == "blobs":
            steps = int(rng.integers(6, 18))
            cy = int(rng.integers(0, h))
            cx = int(rng.integers(0, w))
            for _step in range(steps):
                r = int(rng.integers(1, 3))
                bits |= _disk_bits(h, w, cy, cx, r)
                cy = int(np.clip(cy + rng.integers(-2, 3), 0, h - 1))
                cx = int(np.clip(cx + rng.integers(-2, 3), 0, w - 1))
        else:
            raise SpmError(f"unknown mask shape family {kind!r}")
        if not bits.any():  # cannot happen for the built-in families
            bits[h // 2, w // 2] = True
        masks.append(MaskImage(w, h, bits))
        kinds.append(kind)
    if return_kinds:
        return masks, kinds
    return masks

"""Synthetic artefact generators and training-pair dataset assembly.

Four artefact families are simulated: full-row dropout, band-limited gain
noise, tip-convolution tailing, and phase-hop invalid patches. Each simulator
returns (corrupted frame, mask) and touches nothing outside its own mask.
A transplant helper copies real artefact patches from donor frames.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyBandError,
    EmptyDonorMaskError,
    KernelLargerThanFrameError,
    MismatchedDimensionsError,
    PatchOutOfBoundsError,
    RowOutOfRangeError,
    SpmError,
    WrongChannelError,
)
from .imageio import (
    Channel,
    ManifestEntry,
    MaskImage,
    ScanFrame,
    save_pgm,
    save_spmf,
    write_manifest,
)

ARTEFACT_CLASSES = ("line_dropout", "gain_noise", "tip_tailing", "phase_hop")


@dataclasses.dataclass(frozen=True)
class TipKernel:
    """Height offsets of a probe tip around its apex.

    heights is a (2*radius+1)^2 grid of nonpositive offsets with the apex
    pinned to exactly 0 at the center; asymmetry records the fast-scan shear
    used to construct it.
    """

    radius: int
    heights: np.ndarray
    asymmetry: float = 0.0

    def __post_init__(self):
        if self.radius < 1:
            raise SpmError("tip radius must be >= 1")
        h = np.asarray(self.heights, dtype=np.float32)
        side = 2 * self.radius + 1
        if h.shape != (side, side):
            raise SpmError(f"tip heights must be {side}x{side}, got {h.shape}")
        if h[self.radius, self.radius] != 0.0:
            raise SpmError("tip apex (center element) must be exactly 0")
        if h.max() > 0.0:
            raise SpmError("tip heights must be <= 0")
        h = np.ascontiguousarray(h)
        h.flags.writeable = False
        object.__setattr__(self, "heights", h)


def make_tip_kernel(radius: int, curvature: float = 0.05,
                    asymmetry: float = 0.0) -> TipKernel:
    """Parabolic tip; curvature 0 gives a flat (blunt) tip. The asymmetry
    shear skews the paraboloid along the fast-scan (x) axis."""
    side = 2 * radius + 1
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    sheared = dx - asymmetry * dy
    h = -curvature * (sheared ** 2 + dy ** 2)
    h[radius, radius] = 0.0
    h = np.minimum(h, 0.0)
    return TipKernel(radius, h.astype(np.float32), asymmetry)


def simulate_line_dropout(frame: ScanFrame, rows, level: float):
    """Replace whole scan lines by a constant level."""
    if not (0.0 <= level <= 1.0):
        raise SpmError("dropout level must be in [0,1]")
    rows = sorted(set(int(r) for r in rows))
    for r in rows:
        if r < 0 or r >= frame.height:
            raise RowOutOfRangeError(f"row {r} outside [0, {frame.height})")
    px = frame.pixels.copy()
    bits = np.zeros((frame.height, frame.width), dtype=bool)
    for r in rows:
        px[r, :] = level
        bits[r, :] = True
    return frame.with_pixels(px), MaskImage(frame.width, frame.height, bits)


def simulate_gain_noise(frame: ScanFrame, row_band, amplitude: float, seed: int):
    """Add zero-mean uniform noise to a band of rows, with per-row amplitude
    jitter drawn in [0.5, 1.0] of the requested amplitude."""
    r0, r1 = int(row_band[0]), int(row_band[1])
    if r0 >= r1:
        raise EmptyBandError(f"empty row band [{r0}, {r1})")
    if r0 < 0 or r1 > frame.height:
        raise RowOutOfRangeError(f"band [{r0}, {r1}) outside frame rows")
    if not (amplitude > 0):
        raise SpmError("amplitude must be positive")
    rng = np.random.default_rng(seed)
    px = frame.pixels.astype(np.float64)
    for r in range(r0, r1):
        a = amplitude * rng.uniform(0.5, 1.0)
        px[r, :] += rng.uniform(-a, a, size=frame.width)
    px = np.clip(px, 0.0, 1.0)
    out = frame.pixels.copy()
    out[r0:r1, :] = px[r0:r1, :].astype(np.float32)
    bits = np.zeros((frame.height, frame.width), dtype=bool)
    bits[r0:r1, :] = True
    return frame.with_pixels(out), MaskImage(frame.width, frame.height, bits)


def simulate_tip_tailing(frame: ScanFrame, tip: TipKernel):
    """Grayscale dilation by the tip: out(p) = max_u in(p+u) + heights(u).

    Border handled by replication. The mask marks pixels that changed by
    more than 1e-4 in normalized units.
    """
    r = tip.radius
    if 2 * r + 1 > min(frame.width, frame.height):
        raise KernelLargerThanFrameError(
            f"tip side {2 * r + 1} exceeds frame {frame.width}x{frame.height}")
    src = frame.pixels.astype(np.float64)
    padded = np.pad(src, r, mode="edge")
    heights = tip.heights.astype(np.float64)
    out = np.full_like(src, -np.inf)
    h, w = src.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            cand = padded[r + dy:r + dy + h, r + dx:r + dx + w] \
                + heights[r + dy, r + dx]
            np.maximum(out, cand, out=out)
    out = np.clip(out, 0.0, 1.0)
    changed = np.abs(out - src) > 1e-4
    result = np.where(changed, out, src).astype(np.float32)
    return frame.with_pixels(result), MaskImage(frame.width, frame.height, changed)


def _value_noise(h: int, w: int, rng) -> np.ndarray:
    """Low-frequency invalid texture: white noise smoothed by a 5x5 box."""
    noise = rng.random((h, w))
    smooth = ndimage.uniform_filter(noise, size=5, mode="nearest")
    lo, hi = smooth.min(), smooth.max()
    if hi > lo:
        smooth = (smooth - lo) / (hi - lo)
    return smooth


def simulate_phase_hop(height_frame: ScanFrame, phase_frame: ScanFrame,
                       blobs, hop_sign: int, seed: int):
    """Inside each disk, pin the phase to hop_sign * 90 degrees and replace
    the height data with seeded low-frequency invalid texture."""
    if (height_frame.height, height_frame.width) \
            != (phase_frame.height, phase_frame.width):
        raise MismatchedDimensionsError("height and phase frames differ in size")
    if phase_frame.channel != Channel.Phase:
        raise WrongChannelError("phase_frame must be a Phase channel frame")
    if hop_sign not in (-1, 1):
        raise SpmError("hop_sign must be +1 or -1")
    if phase_frame.z_scale < 180.0:
        raise SpmError(
            f"phase z_scale {phase_frame.z_scale} cannot represent +/-90 deg")
    h, w = height_frame.height, height_frame.width
    bits = np.zeros((h, w), dtype=bool)
    for (cy, cx), radius in blobs:
        cy, cx, radius = int(cy), int(cx), int(radius)
        if cy - radius < 0 or cy + radius >= h or cx - radius < 0 \
                or cx + radius >= w:
            raise SpmError(f"blob at ({cy},{cx}) r={radius} leaves the frame")
        yy, xx = np.ogrid[:h, :w]
        bits |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    if not bits.any():
        return height_frame, phase_frame, MaskImage(w, h, bits)
    rng = np.random.default_rng(seed)
    texture = _value_noise(h, w, rng)
    hpx = height_frame.pixels.copy()
    hpx[bits] = texture[bits].astype(np.float32)
    # 0.5 + sign*90/z_scale denormalizes to exactly sign*90 degrees
    hop_value = np.float32(0.5 + hop_sign * 90.0 / phase_frame.z_scale)
    ppx = phase_frame.pixels.copy()
    ppx[bits] = hop_value
    return (height_frame.with_pixels(hpx), phase_frame.with_pixels(ppx),
            MaskImage(w, h, bits))


def transplant_artefact_patch(clean: ScanFrame, donor: ScanFrame,
                              donor_mask: MaskImage, offset=(0, 0)):
    """Copy donor pixels under donor_mask into the clean frame, translated by
    offset = (dy, dx)."""
    if (donor.height, donor.width) != (donor_mask.height, donor_mask.width):
        raise MismatchedDimensionsError("donor frame and mask differ in size")
    if donor_mask.count == 0:
        raise EmptyDonorMaskError("donor mask is empty")
    dy, dx = int(offset[0]), int(offset[1])
    ys, xs = np.nonzero(donor_mask.bits)
    ty, tx = ys + dy, xs + dx
    if ty.min() < 0 or ty.max() >= clean.height \
            or tx.min() < 0 or tx.max() >= clean.width:
        raise PatchOutOfBoundsError(
            f"translated patch (offset {dy},{dx}) leaves the clean frame")
    px = clean.pixels.copy()
    px[ty, tx] = donor.pixels[ys, xs]
    bits = np.zeros((clean.height, clean.width), dtype=bool)
    bits[ty, tx] = True
    return clean.with_pixels(px), MaskImage(clean.width, clean.height, bits)


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def draw_mask_counts(n_frames: int, seed: int, mu: float = 10.0,
                     sigma: float = 3.1, lo: int = 1, hi: int = 25) -> np.ndarray:
    """Per-frame mask counts: rounded gaussian clipped to [lo, hi]."""
    rng = np.random.default_rng(seed)
    k = np.rint(rng.normal(mu, sigma, size=n_frames))
    return np.clip(k, lo, hi).astype(np.int64)


def _random_artefact(frame: ScanFrame, cls: str, rng):
    """Apply one artefact class with randomized parameters. Returns
    (corrupted, mask); the mask is always nonempty."""
    h, w = frame.height, frame.width
    if cls == "line_dropout":
        n = int(rng.integers(1, 4))
        rows = rng.choice(h, size=min(n, h), replace=False)
        level = float(rng.uniform(0.0, 0.08)) if rng.random() < 0.5 \
            else float(rng.uniform(0.92, 1.0))
        return simulate_line_dropout(frame, rows, level)
    if cls == "gain_noise":
        band_h = int(rng.integers(2, max(3, h // 4) + 1))
        r0 = int(rng.integers(0, h - band_h + 1))
        amplitude = float(rng.uniform(0.1, 0.35))
        return simulate_gain_noise(frame, (r0, r0 + band_h), amplitude,
                                   int(rng.integers(0, 2 ** 31)))
    if cls == "tip_tailing":
        radius = int(rng.integers(1, 4))
        tip = make_tip_kernel(radius, curvature=float(rng.uniform(0.0, 0.03)),
                              asymmetry=float(rng.uniform(-0.6, 0.6)))
        out, mask = simulate_tip_tailing(frame, tip)
        if mask.count > 0:
            return out, mask
        # flat frames dilate to themselves; fall back to a dropout row
        return simulate_line_dropout(frame, [int(rng.integers(0, h))], 1.0)
    if cls == "phase_hop":
        # single-frame variant: invalid-texture patches on the data channel
        n_blobs = int(rng.integers(1, 4))
        bits = np.zeros((h, w), dtype=bool)
        yy, xx = np.ogrid[:h, :w]
        for _ in range(n_blobs):
            radius = int(rng.integers(2, max(3, min(h, w) // 6) + 1))
            cy = int(rng.integers(radius, h - radius))
            cx = int(rng.integers(radius, w - radius))
            bits |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        texture = _value_noise(h, w, rng)
        px = frame.pixels.copy()
        px[bits] = texture[bits].astype(np.float32)
        return frame.with_pixels(px), MaskImage(w, h, bits)
    raise SpmError(f"unknown artefact class {cls!r}")


def generate_pair_dataset(clean_sources, out_dir, seed: int,
                          masks_per_frame=None, bench_fraction: float = 0.0,
                          classes=ARTEFACT_CLASSES) -> list[ManifestEntry]:
    """Build an artefact-clean pair dataset.

    clean_sources: iterable of (frame_id, ScanFrame) or (frame_id, path).
    Each frame receives k artefact masks (k drawn from the clipped gaussian
    unless masks_per_frame forces a constant), one pair per mask. Layout:
    out_dir/{clean,artefact,mask}/<id> plus manifest.jsonl. Deterministic in
    seed; frames are processed in the given order.
    """
    from .imageio import load_spmf  # local import to keep module load light

    out = Path(out_dir)
    for sub in ("clean", "artefact", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    sources = list(clean_sources)
    n = len(sources)
    if n == 0:
        raise SpmError("no clean frames supplied")
    if masks_per_frame is None:
        counts = draw_mask_counts(n, seed)
    else:
        counts = np.full(n, int(masks_per_frame), dtype=np.int64)
    n_bench = int(np.ceil(bench_fraction * n)) if bench_fraction > 0 else 0

    entries: list[ManifestEntry] = []
    for i, (frame_id, src) in enumerate(sources):
        frame = src if isinstance(src, ScanFrame) else load_spmf(src)
        clean_rel = f"clean/{frame_id}.spmf"
        save_spmf(frame, out / clean_rel)
        split = "bench" if i < n_bench else "train"
        frame_rng = np.random.default_rng(
            np.random.SeedSequence([seed, i, 0x5A5A]))
        for j in range(int(counts[i])):
            cls = classes[int(frame_rng.integers(len(classes)))]
            corrupted, mask = _random_artefact(frame, cls, frame_rng)
            pair_id = f"{frame_id}_m{j:02d}"
            art_rel = f"artefact/{pair_id}.spmf"
            mask_rel = f"mask/{pair_id}.pgm"
            save_spmf(corrupted, out / art_rel)
            save_pgm(mask, out / mask_rel)
            entries.append(ManifestEntry(
                id=pair_id,
                clean_path=clean_rel,
                artefact_path=art_rel,
                mask_path=mask_rel,
                channel=frame.channel.name,
                scan_size_um=float(frame.scan_size),
                z_scale=float(frame.z_scale),
                split=split,
                artefact_class=cls,
            ))
    write_manifest(out / "manifest.jsonl", entries)
    return entries

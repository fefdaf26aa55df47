/**
 * Pixel-aligned binary brush.
 *
 * Masks are binary, so the brush has no anti-aliasing: a pixel is either
 * toggled or untouched.  A stamp covers every pixel whose center lies
 * within `radius` of the stamp center (Euclidean), which makes radius 0
 * a single-pixel pencil.
 */

/** One paint action: which flat indices changed, and to what value. */
export interface BrushPatch {
  changed: number[];
  value: 0 | 1;
}

/**
 * Stamp a filled disk at (cx, cy), setting covered pixels to `value`.
 * Returns the flat indices that actually changed so callers can track
 * dirtiness and build undo records.
 */
export function paintDisk(bits: Uint8Array, width: number, height: number,
                          cx: number, cy: number, radius: number,
                          value: 0 | 1): BrushPatch {
  const changed: number[] = [];
  const r = Math.max(0, radius);
  const r2 = r * r;
  const x0 = Math.max(0, Math.ceil(cx - r));
  const x1 = Math.min(width - 1, Math.floor(cx + r));
  const y0 = Math.max(0, Math.ceil(cy - r));
  const y1 = Math.min(height - 1, Math.floor(cy + r));
  for (let y = y0; y <= y1; y++) {
    const dy = y - cy;
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      if (dx * dx + dy * dy <= r2) {
        const idx = y * width + x;
        if (bits[idx] !== value) {
          bits[idx] = value;
          changed.push(idx);
        }
      }
    }
  }
  return { changed, value };
}

/**
 * Stamp disks along the segment from (x0, y0) to (x1, y1) so a fast drag
 * leaves a connected stroke.  Step size is half a pixel, small enough
 * that consecutive stamps always overlap.
 */
export function paintStroke(bits: Uint8Array, width: number, height: number,
                            x0: number, y0: number, x1: number, y1: number,
                            radius: number, value: 0 | 1): BrushPatch {
  const changed: number[] = [];
  const dist = Math.hypot(x1 - x0, y1 - y0);
  const steps = Math.max(1, Math.ceil(dist * 2));
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    const patch = paintDisk(bits, width, height,
                            x0 + (x1 - x0) * t, y0 + (y1 - y0) * t,
                            radius, value);
    for (const idx of patch.changed) changed.push(idx);
  }
  return { changed, value };
}

/** Undo a patch by writing back the opposite value at each changed index. */
export function revertPatch(bits: Uint8Array, patch: BrushPatch): void {
  const restore = patch.value === 1 ? 0 : 1;
  for (const idx of patch.changed) {
    bits[idx] = restore;
  }
}

/**
 * Session state for a review pass: the frame grid, the focused mask, and
 * local edits not yet persisted.  Pure data and transitions — no DOM, no
 * network — so every rule here is unit-testable.
 */

import type { FrameSummary, MaskResponse } from './api.js';
import { decodeRle, encodeRle } from './rle.js';
import type { RlePayload } from './rle.js';

/** A mask loaded for editing, with its server revision and local bits. */
export interface MaskView {
  frameId: string;
  k: number;
  revision: number;
  status: string;
  note: string;
  width: number;
  height: number;
  bits: Uint8Array;
  serverBits: Uint8Array;
  dirty: boolean;
}

export interface MaskRef {
  frameId: string;
  k: number;
}

export interface GridFilter {
  status: string;  // '' means all
  query: string;   // substring of frame id or channel, '' means all
}

/** Flatten a frames listing into an ordered list of (frame, mask) slots. */
export function maskSequence(frames: FrameSummary[]): MaskRef[] {
  const refs: MaskRef[] = [];
  for (const frame of frames) {
    for (let k = 0; k < frame.mask_count; k++) {
      refs.push({ frameId: frame.id, k });
    }
  }
  return refs;
}

/** Frames whose id/channel match the query and that carry the status. */
export function filterFrames(frames: FrameSummary[],
                             filter: GridFilter): FrameSummary[] {
  const q = filter.query.trim().toLowerCase();
  return frames.filter((frame) => {
    if (filter.status && !frame.statuses.includes(filter.status)) {
      return false;
    }
    if (q && !frame.id.toLowerCase().includes(q)
        && !frame.channel.toLowerCase().includes(q)) {
      return false;
    }
    return true;
  });
}

/** Build the editable view of a mask fetched from the service. */
export function openMask(frameId: string, k: number,
                         response: MaskResponse): MaskView {
  const bits = decodeRle(response.rle);
  return {
    frameId,
    k,
    revision: response.revision,
    status: response.status,
    note: response.note,
    width: response.rle.width,
    height: response.rle.height,
    bits,
    serverBits: bits.slice(),
    dirty: false,
  };
}

/** Recompute dirtiness after a brush action. */
export function refreshDirty(view: MaskView): void {
  const { bits, serverBits } = view;
  for (let i = 0; i < bits.length; i++) {
    if (bits[i] !== serverBits[i]) {
      view.dirty = true;
      return;
    }
  }
  view.dirty = false;
}

/** Payload persisting the local bits at the revision we loaded. */
export function savePayload(view: MaskView): { revision: number;
                                               rle: RlePayload } {
  return {
    revision: view.revision,
    rle: encodeRle(view.bits, view.width, view.height),
  };
}

/** Fold a successful write acknowledgment back into the view. */
export function applyAck(view: MaskView,
                         ack: { revision: number; status: string }): void {
  view.revision = ack.revision;
  view.status = ack.status;
  view.serverBits = view.bits.slice();
  view.dirty = false;
}

/**
 * Reload-and-reapply after a 409: adopt the winning revision's bits and
 * status, then re-play our local changes on top (the pixels we painted
 * win at those indices; everything else takes the server's value).
 */
export function rebaseOnConflict(view: MaskView,
                                 winner: MaskResponse): void {
  const serverBits = decodeRle(winner.rle);
  const merged = serverBits.slice();
  for (let i = 0; i < view.bits.length; i++) {
    if (view.bits[i] !== view.serverBits[i]) {
      merged[i] = view.bits[i] as 0 | 1;
    }
  }
  view.revision = winner.revision;
  view.status = winner.status;
  view.note = winner.note;
  view.serverBits = serverBits;
  view.bits = merged;
  refreshDirty(view);
}

/** Step through the mask sequence; clamps at the ends. */
export function step(refs: MaskRef[], current: MaskRef | null,
                     delta: number): MaskRef | null {
  if (refs.length === 0) return null;
  if (current === null) return refs[0] ?? null;
  const idx = refs.findIndex(
    (r) => r.frameId === current.frameId && r.k === current.k);
  const next = Math.min(refs.length - 1, Math.max(0, idx + delta));
  return refs[next] ?? null;
}

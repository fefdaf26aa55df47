/**
 * Review UI entry point: wires the API client, session state, brush and
 * keyboard triage to the DOM.  Served by the review service itself, so
 * all requests are same-origin relative.
 */

import { ApiError, ReviewApi } from './api.js';
import type { FrameSummary } from './api.js';
import { paintStroke, revertPatch } from './brush.js';
import type { BrushPatch } from './brush.js';
import { attachTriage } from './keyboard.js';
import {
  applyAck, filterFrames, maskSequence, openMask, rebaseOnConflict,
  refreshDirty, savePayload, step,
} from './state.js';
import type { GridFilter, MaskRef, MaskView } from './state.js';

const OVERLAY_RGBA: [number, number, number, number] = [255, 140, 0, 110];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class ReviewUi {
  api = new ReviewApi('');
  frames: FrameSummary[] = [];
  refs: MaskRef[] = [];
  current: MaskRef | null = null;
  view: MaskView | null = null;
  filter: GridFilter = { status: '', query: '' };
  zoom = 6;
  brushRadius = 1;
  erase = false;
  painting = false;
  lastPoint: { x: number; y: number } | null = null;
  strokePatches: BrushPatch[] = [];
  preview: HTMLImageElement | null = null;

  banner = el<HTMLDivElement>('banner');
  frameList = el<HTMLUListElement>('frame-list');
  statusFilter = el<HTMLSelectElement>('status-filter');
  queryFilter = el<HTMLInputElement>('query-filter');
  canvas = el<HTMLCanvasElement>('view-canvas');
  maskLabel = el<HTMLSpanElement>('mask-label');
  statusBadge = el<HTMLSpanElement>('status-badge');
  dirtyBadge = el<HTMLSpanElement>('dirty-badge');
  hoverReadout = el<HTMLSpanElement>('hover-readout');
  physicsReadout = el<HTMLSpanElement>('physics-readout');
  noteField = el<HTMLInputElement>('note-field');
  radiusSlider = el<HTMLInputElement>('brush-radius');
  radiusLabel = el<HTMLSpanElement>('brush-radius-label');

  async start(): Promise<void> {
    el<HTMLButtonElement>('retry').onclick = () => void this.refresh();
    el<HTMLButtonElement>('accept').onclick = () => void this.setStatus('accepted');
    el<HTMLButtonElement>('reject').onclick = () => void this.setStatus('rejected');
    el<HTMLButtonElement>('save').onclick = () => void this.saveEdits();
    el<HTMLButtonElement>('undo').onclick = () => this.undoStroke();
    el<HTMLButtonElement>('physics').onclick = () => void this.runPhysicsCheck();
    el<HTMLButtonElement>('zoom-in').onclick = () => this.setZoom(this.zoom + 1);
    el<HTMLButtonElement>('zoom-out').onclick = () => this.setZoom(this.zoom - 1);
    el<HTMLButtonElement>('erase-toggle').onclick = () => {
      this.erase = !this.erase;
      el<HTMLButtonElement>('erase-toggle').classList.toggle('active', this.erase);
    };

    this.statusFilter.onchange = () => {
      this.filter.status = this.statusFilter.value;
      this.renderFrameList();
    };
    this.queryFilter.oninput = () => {
      this.filter.query = this.queryFilter.value;
      this.renderFrameList();
    };
    this.radiusSlider.oninput = () => {
      this.brushRadius = Number(this.radiusSlider.value);
      this.radiusLabel.textContent = String(this.brushRadius);
    };

    this.canvas.addEventListener('pointerdown', (e) => this.onPointerDown(e));
    this.canvas.addEventListener('pointermove', (e) => this.onPointerMove(e));
    window.addEventListener('pointerup', () => this.onPointerUp());
    this.canvas.addEventListener('pointerleave', () => {
      this.hoverReadout.textContent = '';
    });

    attachTriage(document, {
      accept: () => void this.setStatus('accepted'),
      reject: () => void this.setStatus('rejected'),
      next: () => void this.navigate(+1),
      prev: () => void this.navigate(-1),
    });

    await this.refresh();
  }

  async refresh(): Promise<void> {
    try {
      this.frames = await this.api.listFrames();
      this.banner.hidden = true;
    } catch {
      this.banner.hidden = false;
      return;
    }
    this.refs = maskSequence(this.frames);
    this.renderFrameList();
    if (this.current === null && this.refs.length > 0) {
      await this.focusMask(this.refs[0]!);
    } else if (this.current !== null) {
      await this.focusMask(this.current);
    }
  }

  renderFrameList(): void {
    const visible = filterFrames(this.frames, this.filter);
    this.frameList.textContent = '';
    if (visible.length === 0) {
      const li = document.createElement('li');
      li.className = 'empty-state';
      li.textContent = this.frames.length === 0
        ? 'No frames in this dataset.'
        : 'No frames match the filter.';
      this.frameList.appendChild(li);
      return;
    }
    for (const frame of visible) {
      const li = document.createElement('li');
      const title = document.createElement('div');
      title.className = 'frame-title';
      title.textContent = `${frame.id} · ${frame.channel}`;
      li.appendChild(title);
      const badges = document.createElement('div');
      badges.className = 'badges';
      frame.statuses.forEach((status, k) => {
        const b = document.createElement('button');
        b.className = `badge ${status}`;
        b.textContent = `${k}: ${status}`;
        b.onclick = () => void this.focusMask({ frameId: frame.id, k });
        if (this.current && this.current.frameId === frame.id
            && this.current.k === k) {
          b.classList.add('focused');
        }
        badges.appendChild(b);
      });
      li.appendChild(badges);
      this.frameList.appendChild(li);
    }
  }

  async focusMask(ref: MaskRef): Promise<void> {
    if (this.view?.dirty
        && !window.confirm('Discard unsaved brush strokes?')) {
      return;
    }
    try {
      const response = await this.api.getMask(ref.frameId, ref.k);
      this.view = openMask(ref.frameId, ref.k, response);
      this.current = ref;
      this.strokePatches = [];
      this.physicsReadout.textContent = '';
      this.noteField.value = response.note;
      this.preview = new Image();
      this.preview.onload = () => this.draw();
      this.preview.src = this.api.imageUrl(ref.frameId)
        + `?rev=${response.revision}`;
      this.renderFrameList();
      this.renderMaskHeader();
      this.draw();
    } catch {
      this.banner.hidden = false;
    }
  }

  async navigate(delta: number): Promise<void> {
    const next = step(this.refs, this.current, delta);
    if (next && (this.current === null
                 || next.frameId !== this.current.frameId
                 || next.k !== this.current.k)) {
      await this.focusMask(next);
    }
  }

  renderMaskHeader(): void {
    if (!this.view) return;
    this.maskLabel.textContent =
      `${this.view.frameId} / mask ${this.view.k} (rev ${this.view.revision})`;
    this.statusBadge.textContent = this.view.status;
    this.statusBadge.className = `badge ${this.view.status}`;
    this.dirtyBadge.hidden = !this.view.dirty;
  }

  setZoom(zoom: number): void {
    this.zoom = Math.min(16, Math.max(1, zoom));
    this.draw();
  }

  draw(): void {
    if (!this.view) return;
    const { width, height, bits } = this.view;
    this.canvas.width = width;
    this.canvas.height = height;
    this.canvas.style.width = `${width * this.zoom}px`;
    this.canvas.style.height = `${height * this.zoom}px`;
    const ctx = this.canvas.getContext('2d');
    if (!ctx) return;
    ctx.clearRect(0, 0, width, height);
    if (this.preview && this.preview.complete
        && this.preview.naturalWidth === width) {
      ctx.drawImage(this.preview, 0, 0);
    }
    const overlay = ctx.createImageData(width, height);
    const [r, g, b, a] = OVERLAY_RGBA;
    for (let i = 0; i < bits.length; i++) {
      if (bits[i]) {
        overlay.data[i * 4] = r;
        overlay.data[i * 4 + 1] = g;
        overlay.data[i * 4 + 2] = b;
        overlay.data[i * 4 + 3] = a;
      }
    }
    const off = document.createElement('canvas');
    off.width = width;
    off.height = height;
    off.getContext('2d')?.putImageData(overlay, 0, 0);
    ctx.drawImage(off, 0, 0);
  }

  canvasPoint(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: (e.clientX - rect.left) / this.zoom,
      y: (e.clientY - rect.top) / this.zoom,
    };
  }

  onPointerDown(e: PointerEvent): void {
    if (!this.view || e.button !== 0) return;
    e.preventDefault();
    this.painting = true;
    const p = this.canvasPoint(e);
    this.lastPoint = p;
    this.applyBrush(p, p, e.shiftKey);
  }

  onPointerMove(e: PointerEvent): void {
    if (!this.view) return;
    const p = this.canvasPoint(e);
    const x = Math.floor(p.x);
    const y = Math.floor(p.y);
    if (x >= 0 && y >= 0 && x < this.view.width && y < this.view.height) {
      const on = this.view.bits[y * this.view.width + x] ? 'mask' : '·';
      this.hoverReadout.textContent = `(${x}, ${y}) ${on}`;
    }
    if (this.painting && this.lastPoint) {
      this.applyBrush(this.lastPoint, p, e.shiftKey);
      this.lastPoint = p;
    }
  }

  onPointerUp(): void {
    this.painting = false;
    this.lastPoint = null;
  }

  applyBrush(from: { x: number; y: number }, to: { x: number; y: number },
             shiftErase: boolean): void {
    if (!this.view) return;
    const value: 0 | 1 = (this.erase || shiftErase) ? 0 : 1;
    const patch = paintStroke(this.view.bits, this.view.width,
                              this.view.height, from.x, from.y, to.x, to.y,
                              this.brushRadius, value);
    if (patch.changed.length > 0) {
      this.strokePatches.push(patch);
      refreshDirty(this.view);
      this.renderMaskHeader();
      this.draw();
    }
  }

  undoStroke(): void {
    if (!this.view) return;
    const patch = this.strokePatches.pop();
    if (!patch) return;
    revertPatch(this.view.bits, patch);
    refreshDirty(this.view);
    this.renderMaskHeader();
    this.draw();
  }

  async setStatus(status: 'accepted' | 'rejected'): Promise<void> {
    if (!this.view) return;
    await this.write({ revision: this.view.revision, status });
  }

  async saveEdits(): Promise<void> {
    if (!this.view) return;
    const payload = savePayload(this.view);
    const note = this.noteField.value;
    await this.write(note !== this.view.note
      ? { ...payload, note }
      : payload);
  }

  /** Shared write path: PUT, fold in the ack, walk the 409 protocol. */
  async write(body: { revision: number; status?: string;
                      rle?: ReturnType<typeof savePayload>['rle'];
                      note?: string }): Promise<void> {
    if (!this.view || !this.current) return;
    try {
      const ack = await this.api.putMask(this.current.frameId,
                                         this.current.k, body);
      applyAck(this.view, ack);
      await this.refreshFramesOnly();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.handleConflict(body);
      } else if (err instanceof ApiError) {
        const msg = (err.body as { error?: string } | null)?.error;
        window.alert(msg ?? `request failed (${err.status})`);
      } else {
        this.banner.hidden = false;
      }
    }
    this.renderMaskHeader();
    this.draw();
  }

  /**
   * 409 path: never silently retry with the stale revision.  Reload the
   * winner, offer reload-and-reapply; on confirm, rebase the local strokes
   * and re-submit against the current revision.
   */
  async handleConflict(body: { status?: string }): Promise<void> {
    if (!this.view || !this.current) return;
    const winner = await this.api.getMask(this.current.frameId,
                                          this.current.k);
    const reapply = window.confirm(
      `This mask changed elsewhere (now revision ${winner.revision}). `
      + 'Reload it and reapply your changes?');
    if (!reapply) {
      this.view = openMask(this.current.frameId, this.current.k, winner);
      this.strokePatches = [];
      return;
    }
    rebaseOnConflict(this.view, winner);
    const retry: { revision: number; status?: string;
                   rle?: ReturnType<typeof savePayload>['rle'] } = {
      revision: this.view.revision,
    };
    if (body.status) retry.status = body.status;
    if (this.view.dirty) retry.rle = savePayload(this.view).rle;
    const ack = await this.api.putMask(this.current.frameId, this.current.k,
                                       retry);
    applyAck(this.view, ack);
    await this.refreshFramesOnly();
  }

  async refreshFramesOnly(): Promise<void> {
    try {
      this.frames = await this.api.listFrames();
      this.refs = maskSequence(this.frames);
      this.renderFrameList();
    } catch {
      this.banner.hidden = false;
    }
  }

  async runPhysicsCheck(): Promise<void> {
    if (!this.current) return;
    try {
      const check = await this.api.physicsCheck(this.current.frameId,
                                                this.current.k);
      this.physicsReadout.textContent =
        `Δh ${check.delta_h_nm.toFixed(3)} nm → ${check.verdict}`;
    } catch (err) {
      if (err instanceof ApiError) {
        const msg = (err.body as { error?: string } | null)?.error;
        this.physicsReadout.textContent = msg ?? 'physics check failed';
      }
    }
  }
}

window.addEventListener('DOMContentLoaded', () => {
  void new ReviewUi().start();
});

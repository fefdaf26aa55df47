/**
 * Thin typed client for the review service JSON API.
 *
 * All routes live under /api; the UI is served by the same process, so a
 * relative base works in the browser while tests pass an absolute one.
 * Non-2xx responses become ApiError with the parsed body attached — the
 * 409 conflict body carries the revision that won.
 */

import type { RlePayload } from './rle.js';

export interface FrameSummary {
  id: string;
  channel: string;
  scan_size_um: number;
  mask_count: number;
  statuses: string[];
}

export interface MaskResponse {
  revision: number;
  status: string;
  note: string;
  rle: RlePayload;
}

export interface MaskWrite {
  revision: number;
  status?: string;
  rle?: RlePayload;
  note?: string;
}

export interface WriteAck {
  revision: number;
  status: string;
}

export interface PhysicsCheck {
  delta_h_nm: number;
  verdict: string;
}

export class ApiError extends Error {
  status: number;
  body: unknown;

  constructor(status: number, body: unknown) {
    super(`request failed with status ${status}`);
    this.name = 'ApiError';
    this.status = status;
    this.body = body;
  }
}

export class ReviewApi {
  private base: string;

  constructor(base = '') {
    this.base = base.replace(/\/$/, '');
  }

  private async request<T>(method: string, path: string,
                           body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'Content-Type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await fetch(this.base + path, init);
    const text = await resp.text();
    let parsed: unknown = null;
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, parsed);
    }
    return parsed as T;
  }

  listFrames(): Promise<FrameSummary[]> {
    return this.request('GET', '/api/frames');
  }

  getMask(frameId: string, k: number): Promise<MaskResponse> {
    return this.request('GET', `/api/frames/${frameId}/masks/${k}`);
  }

  putMask(frameId: string, k: number, write: MaskWrite): Promise<WriteAck> {
    return this.request('PUT', `/api/frames/${frameId}/masks/${k}`, write);
  }

  physicsCheck(frameId: string, k: number): Promise<PhysicsCheck> {
    return this.request(
      'POST', `/api/frames/${frameId}/masks/${k}/physics-check`);
  }

  /** URL of the 8-bit preview render for an <img> or drawImage source. */
  imageUrl(frameId: string): string {
    return `${this.base}/api/frames/${frameId}/image.png`;
  }
}

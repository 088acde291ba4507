/**
 * Client-side session state machine.
 *
 * One request in flight at a time; interactions arriving while busy are
 * queued, never dropped.  The marker list mirrors the server's click list
 * exactly: markers change only when a server response confirms the action,
 * and every response's click_count must equal the local marker count.
 * Masks are never computed locally.
 */

import type { ClickResponse, Transport } from "./protocol.js";

export interface Marker {
  x: number;
  y: number;
  positive: boolean;
}

export interface FrameListener {
  (maskRle: number[] | null, markers: Marker[], latencyMs: number | null): void;
}

type Action =
  | { kind: "click"; x: number; y: number; positive: boolean }
  | { kind: "undo" };

export class UiSession {
  markers: Marker[] = [];
  maskRle: number[] | null = null;
  latencyHistory: number[] = [];
  sessionId = "";
  width = 0;
  height = 0;
  busy = false;
  lastError: string | null = null;
  lastCold = false; // server encoded on demand rather than serving a cache

  private queue: Action[] = [];
  private listener: FrameListener | null = null;

  constructor(private transport: Transport) {}

  onFrame(fn: FrameListener): void {
    this.listener = fn;
  }

  async open(imageId: string): Promise<void> {
    const r = await this.transport.open(imageId);
    this.sessionId = r.session_id;
    this.width = r.width;
    this.height = r.height;
    this.markers = [];
    this.maskRle = null;
    this.latencyHistory = [];
    this.queue = [];
  }

  get canUndo(): boolean {
    return this.markers.length > 0 && !this.busy;
  }

  /** Queue a click in image coordinates; drained in arrival order. */
  placeClick(x: number, y: number, positive: boolean): Promise<void> {
    if (x < 0 || x >= this.width || y < 0 || y >= this.height) {
      return Promise.resolve(); // outside the image: ignore, not an error
    }
    this.queue.push({ kind: "click", x, y, positive });
    return this.drain();
  }

  undoAction(): Promise<void> {
    if (this.markers.length === 0 && this.queue.length === 0) {
      return Promise.resolve(); // button is disabled in this state
    }
    this.queue.push({ kind: "undo" });
    return this.drain();
  }

  async flush(): Promise<void> {
    await this.drain();
  }

  private async drain(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      while (this.queue.length > 0) {
        const action = this.queue.shift()!;
        await this.perform(action);
      }
    } finally {
      this.busy = false;
    }
  }

  private async perform(action: Action): Promise<void> {
    try {
      let r: ClickResponse;
      if (action.kind === "click") {
        r = await this.transport.click({
          session_id: this.sessionId,
          x: action.x,
          y: action.y,
          positive: action.positive,
        });
        this.markers.push({ x: action.x, y: action.y, positive: action.positive });
      } else {
        if (this.markers.length === 0) return; // queued undo became stale
        r = await this.transport.undo(this.sessionId);
        this.markers.pop();
      }
      this.lastError = null;
      if (r.click_count !== this.markers.length) {
        // resync to the server's truth; it owns the click list
        this.lastError = `desync: server count ${r.click_count}, local ${this.markers.length}`;
        this.markers.length = r.click_count;
      }
      this.maskRle = r.mask_rle;
      this.lastCold = r.cold ?? false;
      this.latencyHistory.push(r.latency_ms);
      this.listener?.(this.maskRle, this.markers, r.latency_ms);
    } catch (e) {
      // server errors leave markers untouched; surface and keep the session
      this.lastError = String(e);
      this.listener?.(this.maskRle, this.markers, null);
    }
  }
}

import { describe, expect, it } from "vitest";

import type { ClickResponse, OpenResponse, Transport } from "../src/protocol.js";
import { UiSession } from "../src/session.js";

function mulberry32(seed: number) {
  return () => {
    seed |= 0;
    seed = (seed + 0x6d2b79f5) | 0;
    let t = Math.imul(seed ^ (seed >>> 15), 1 | seed);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** In-memory server with the real protocol semantics (clicks + undo-by-replay). */
class MockServer implements Transport {
  clicks: Array<{ x: number; y: number; positive: boolean }> = [];
  width = 32;
  height = 32;
  failNext = false;
  delay = 0;

  async open(_: string): Promise<OpenResponse> {
    this.clicks = [];
    return { session_id: "s1", width: this.width, height: this.height };
  }

  private response(): ClickResponse {
    const mask = new Uint8Array(this.width * this.height);
    for (const c of this.clicks) {
      if (c.positive) mask[c.y * this.width + c.x] = 1;
    }
    // simple honest RLE of the mock mask
    const rle: number[] = [];
    let cur = 0;
    let run = 0;
    for (let i = 0; i < mask.length; i++) {
      if ((mask[i] ? 1 : 0) === cur) run++;
      else {
        rle.push(run);
        cur = mask[i] ? 1 : 0;
        run = 1;
      }
    }
    rle.push(run);
    return { mask_rle: rle, latency_ms: 1.5, click_count: this.clicks.length };
  }

  async click(msg: { x: number; y: number; positive: boolean }): Promise<ClickResponse> {
    if (this.delay) await new Promise((r) => setTimeout(r, this.delay));
    if (this.failNext) {
      this.failNext = false;
      throw new Error("injected failure");
    }
    this.clicks.push({ x: msg.x, y: msg.y, positive: msg.positive });
    return this.response();
  }

  async undo(_: string): Promise<ClickResponse> {
    if (this.failNext) {
      this.failNext = false;
      throw new Error("injected failure");
    }
    if (this.clicks.length === 0) throw new Error("undo on empty session");
    this.clicks.pop();
    return this.response();
  }

  async close(_: string): Promise<void> {}
}

describe("UiSession", () => {
  it("one click then undo leaves a blank overlay", async () => {
    const server = new MockServer();
    const s = new UiSession(server);
    await s.open("img");
    await s.placeClick(3, 4, true);
    expect(s.markers.length).toBe(1);
    await s.undoAction();
    expect(s.markers.length).toBe(0);
    expect(s.maskRle).toEqual([server.width * server.height]);
  });

  it("undo with zero markers is a disabled no-op", async () => {
    const server = new MockServer();
    const s = new UiSession(server);
    await s.open("img");
    expect(s.canUndo).toBe(false);
    await s.undoAction();
    expect(s.markers.length).toBe(0);
    expect(s.lastError).toBeNull();
  });

  it("clicks during an in-flight request are queued, not dropped", async () => {
    const server = new MockServer();
    server.delay = 5;
    const s = new UiSession(server);
    await s.open("img");
    const p1 = s.placeClick(1, 1, true);
    const p2 = s.placeClick(2, 2, false);
    const p3 = s.placeClick(3, 3, true);
    await Promise.all([p1, p2, p3]);
    await s.flush();
    expect(server.clicks.length).toBe(3);
    expect(s.markers.length).toBe(3);
  });

  it("server failure leaves markers untouched", async () => {
    const server = new MockServer();
    const s = new UiSession(server);
    await s.open("img");
    await s.placeClick(1, 1, true);
    server.failNext = true;
    await s.placeClick(2, 2, true);
    expect(s.markers.length).toBe(1);
    expect(s.lastError).toContain("injected");
    await s.placeClick(3, 3, true); // channel still usable
    expect(s.markers.length).toBe(2);
  });

  it("out-of-bounds clicks are ignored locally", async () => {
    const server = new MockServer();
    const s = new UiSession(server);
    await s.open("img");
    await s.placeClick(-1, 5, true);
    await s.placeClick(32, 5, true);
    expect(server.clicks.length).toBe(0);
  });

  it("marker count equals server click_count over 200 random action sequences", async () => {
    const rand = mulberry32(42);
    for (let seq = 0; seq < 200; seq++) {
      const server = new MockServer();
      const s = new UiSession(server);
      await s.open("img");
      const steps = 1 + Math.floor(rand() * 12);
      for (let i = 0; i < steps; i++) {
        const r = rand();
        if (r < 0.55) {
          await s.placeClick(
            Math.floor(rand() * server.width),
            Math.floor(rand() * server.height),
            rand() < 0.5,
          );
        } else if (r < 0.85) {
          await s.undoAction();
        } else {
          // burst: two quick clicks racing the queue
          const a = s.placeClick(1, 1, true);
          const b = s.placeClick(2, 2, false);
          await Promise.all([a, b]);
        }
        await s.flush();
        expect(s.markers.length).toBe(server.clicks.length);
      }
    }
  });
});

import { describe, expect, it } from "vitest";

import { compositeOverlay, maskIou } from "../src/overlay.js";

describe("overlay compositing", () => {
  it("all-background mask leaves the image unchanged", () => {
    const base = new Uint8ClampedArray([10, 20, 30, 255, 40, 50, 60, 255]);
    const out = compositeOverlay(base, new Uint8Array([0, 0]));
    expect(out).toEqual(base);
  });

  it("full-foreground mask tints every pixel the same way", () => {
    const base = new Uint8ClampedArray(16).fill(100);
    const out = compositeOverlay(base, new Uint8Array([1, 1, 1, 1]));
    for (let i = 0; i < 4; i++) {
      expect(out[i * 4]).toBe(out[0]);
      expect(out[i * 4 + 1]).toBe(out[1]);
      expect(out[i * 4 + 2]).toBe(out[2]);
      expect(out[i * 4 + 3]).toBe(100); // alpha untouched
    }
    expect(out[0]).not.toBe(100);
  });

  it("rejects mismatched buffers", () => {
    expect(() => compositeOverlay(new Uint8ClampedArray(8), new Uint8Array(3)))
      .toThrow(/match/);
  });

  it("iou", () => {
    const a = new Uint8Array([1, 1, 0, 0]);
    const b = new Uint8Array([1, 0, 1, 0]);
    expect(maskIou(a, b)).toBeCloseTo(1 / 3);
    expect(maskIou(new Uint8Array(4), new Uint8Array(4))).toBe(1);
  });
});

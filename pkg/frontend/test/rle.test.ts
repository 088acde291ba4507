import { describe, expect, it } from "vitest";

import { decodeRle, encodeRle } from "../src/rle.js";

function mulberry32(seed: number) {
  return () => {
    seed |= 0;
    seed = (seed + 0x6d2b79f5) | 0;
    let t = Math.imul(seed ^ (seed >>> 15), 1 | seed);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("rle codec", () => {
  it("decodes all-background", () => {
    const m = decodeRle([9], 3, 3);
    expect([...m]).toEqual(new Array(9).fill(0));
  });

  it("decodes full-foreground (leading zero background run)", () => {
    const m = decodeRle([0, 6], 3, 2);
    expect([...m]).toEqual(new Array(6).fill(1));
  });

  it("round-trips a checkerboard exactly", () => {
    const w = 8;
    const h = 8;
    const mask = new Uint8Array(w * h);
    for (let i = 0; i < mask.length; i++) {
      mask[i] = ((i % w) + Math.floor(i / w)) % 2;
    }
    const rle = encodeRle(mask);
    expect(decodeRle(rle, w, h)).toEqual(mask);
    expect(encodeRle(decodeRle(rle, w, h))).toEqual(rle);
  });

  it("rejects an RLE whose sum mismatches the dims", () => {
    expect(() => decodeRle([3, 2], 2, 3)).toThrow(/expected/);
  });

  it("round-trips randomized masks", () => {
    const rand = mulberry32(7);
    for (let trial = 0; trial < 50; trial++) {
      const w = 1 + Math.floor(rand() * 24);
      const h = 1 + Math.floor(rand() * 24);
      const density = rand();
      const mask = new Uint8Array(w * h);
      for (let i = 0; i < mask.length; i++) mask[i] = rand() < density ? 1 : 0;
      const rle = encodeRle(mask);
      expect(decodeRle(rle, w, h)).toEqual(mask);
      // canonical form: no interior zero-length runs
      for (let i = 1; i < rle.length; i++) expect(rle[i]).toBeGreaterThan(0);
    }
  });
});

/**
 * Mask compositing: paint a semi-transparent foreground tint over RGBA
 * image bytes.  Pure buffer math so it is testable off-DOM; the canvas
 * wrapper lives in main.ts.
 */

export interface Tint {
  r: number;
  g: number;
  b: number;
  alpha: number; // 0..1
}

export const DEFAULT_TINT: Tint = { r: 46, g: 204, b: 113, alpha: 0.45 };

export function compositeOverlay(
  base: Uint8ClampedArray,
  mask: Uint8Array,
  tint: Tint = DEFAULT_TINT,
): Uint8ClampedArray {
  if (base.length !== mask.length * 4) {
    throw new Error(`RGBA buffer ${base.length} does not match mask ${mask.length}`);
  }
  const out = new Uint8ClampedArray(base);
  const a = tint.alpha;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      const o = i * 4;
      out[o] = out[o] * (1 - a) + tint.r * a;
      out[o + 1] = out[o + 1] * (1 - a) + tint.g * a;
      out[o + 2] = out[o + 2] * (1 - a) + tint.b * a;
    }
  }
  return out;
}

/** Intersection-over-union between a decoded mask and a reference mask. */
export function maskIou(a: Uint8Array, b: Uint8Array): number {
  if (a.length !== b.length) throw new Error("mask length mismatch");
  let inter = 0;
  let union = 0;
  for (let i = 0; i < a.length; i++) {
    const av = a[i] !== 0;
    const bv = b[i] !== 0;
    if (av && bv) inter++;
    if (av || bv) union++;
  }
  return union === 0 ? 1 : inter / union;
}

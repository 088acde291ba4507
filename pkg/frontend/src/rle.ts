/**
 * Mask run-length codec matching the wire format: alternating run lengths
 * starting with background, row-major over original image dims.
 */

export function decodeRle(rle: number[], width: number, height: number): Uint8Array {
  const total = rle.reduce((a, b) => a + b, 0);
  if (total !== width * height) {
    throw new Error(`RLE sums to ${total}, expected ${width * height}`);
  }
  const out = new Uint8Array(width * height);
  let pos = 0;
  for (let i = 0; i < rle.length; i++) {
    const run = rle[i];
    if (run < 0) throw new Error(`negative run length at ${i}`);
    if (i % 2 === 1) out.fill(1, pos, pos + run);
    pos += run;
  }
  return out;
}

export function encodeRle(mask: Uint8Array | boolean[]): number[] {
  const n = mask.length;
  const runs: number[] = [];
  let current = 0; // stream starts with a background count
  let run = 0;
  for (let i = 0; i < n; i++) {
    const v = mask[i] ? 1 : 0;
    if (v === current) {
      run++;
    } else {
      runs.push(run);
      current = v;
      run = 1;
    }
  }
  if (n > 0) runs.push(run);
  return runs;
}

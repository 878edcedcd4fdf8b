/**
 * Client-side decoding of the run-length mask format used by the service.
 *
 * Counts are alternating run lengths over the row-major flattened mask,
 * zeros first; a mask that starts with ones carries a leading 0 count.
 */

export interface Rle {
  order: string;
  width: number;
  height: number;
  counts: number[];
}

export interface Mask {
  width: number;
  height: number;
  /** one byte per pixel, row-major, 0 or 1 */
  data: Uint8Array;
}

export function decodeRle(rle: Rle): Mask {
  if (rle.order !== "row-major") {
    throw new Error(`unsupported rle order ${rle.order}`);
  }
  const size = rle.width * rle.height;
  const data = new Uint8Array(size);
  let pos = 0;
  let value = 0;
  for (const count of rle.counts) {
    if (count < 0 || pos + count > size) {
      throw new Error("rle counts exceed mask size");
    }
    if (value) {
      data.fill(1, pos, pos + count);
    }
    pos += count;
    value ^= 1;
  }
  if (pos !== size) {
    throw new Error(`rle covers ${pos} of ${size} pixels`);
  }
  return { width: rle.width, height: rle.height, data };
}

/** The all-ones mask; the root node serializes its mask as null. */
export function fullMask(width: number, height: number): Mask {
  return { width, height, data: new Uint8Array(width * height).fill(1) };
}

export function maskGet(mask: Mask, a: number, b: number): boolean {
  if (a < 0 || b < 0 || a >= mask.width || b >= mask.height) {
    return false;
  }
  return mask.data[b * mask.width + a] === 1;
}

export function maskCount(mask: Mask): number {
  let total = 0;
  for (let i = 0; i < mask.data.length; i++) {
    total += mask.data[i];
  }
  return total;
}

/** First set pixel in row-major order, or null for an empty mask. */
export function firstSetPixel(mask: Mask): { a: number; b: number } | null {
  for (let i = 0; i < mask.data.length; i++) {
    if (mask.data[i]) {
      return { a: i % mask.width, b: Math.floor(i / mask.width) };
    }
  }
  return null;
}

import { describe, expect, it } from "vitest";

import {
  Mask,
  decodeRle,
  firstSetPixel,
  fullMask,
  maskCount,
  maskGet,
} from "../src/rle.js";

function bits(mask: Mask): number[] {
  return Array.from(mask.data);
}

// reference encoder mirroring the service's canonical form: alternating
// run lengths, zeros first, a leading 0 when the mask starts with ones
function encode(data: number[], width: number, height: number) {
  const counts: number[] = [];
  let value = 0;
  let run = 0;
  for (const bit of data) {
    if (bit === value) {
      run += 1;
    } else {
      counts.push(run);
      value = bit;
      run = 1;
    }
  }
  counts.push(run);
  return { order: "row-major", width, height, counts };
}

describe("decodeRle", () => {
  it("decodes a hand case", () => {
    const mask = decodeRle({
      order: "row-major",
      width: 4,
      height: 2,
      counts: [1, 2, 1, 2, 2],
    });
    expect(bits(mask)).toEqual([0, 1, 1, 0, 1, 1, 0, 0]);
  });

  it("handles the leading-zero form for masks that start set", () => {
    const mask = decodeRle({
      order: "row-major",
      width: 3,
      height: 2,
      counts: [0, 6],
    });
    expect(bits(mask)).toEqual([1, 1, 1, 1, 1, 1]);
    expect(maskCount(mask)).toBe(6);
  });

  it("decodes the empty mask", () => {
    const mask = decodeRle({
      order: "row-major",
      width: 5,
      height: 3,
      counts: [15],
    });
    expect(maskCount(mask)).toBe(0);
    expect(firstSetPixel(mask)).toBeNull();
  });

  it("round-trips random masks through the reference encoder", () => {
    let state = 12345;
    const rand = () => {
      state = (state * 1103515245 + 12345) & 0x7fffffff;
      return state / 0x7fffffff;
    };
    for (let trial = 0; trial < 200; trial++) {
      const width = 1 + Math.floor(rand() * 17);
      const height = 1 + Math.floor(rand() * 13);
      const density = rand();
      const data = Array.from({ length: width * height }, () =>
        rand() < density ? 1 : 0,
      );
      const mask = decodeRle(encode(data, width, height));
      expect(bits(mask)).toEqual(data);
    }
  });

  it("rejects malformed runs", () => {
    expect(() =>
      decodeRle({ order: "row-major", width: 2, height: 2, counts: [5] }),
    ).toThrow(/exceed/);
    expect(() =>
      decodeRle({ order: "row-major", width: 2, height: 2, counts: [3] }),
    ).toThrow(/covers 3 of 4/);
    expect(() =>
      decodeRle({ order: "col-major", width: 2, height: 2, counts: [4] }),
    ).toThrow(/unsupported/);
  });
});

describe("mask helpers", () => {
  it("indexes row-major with a as the column", () => {
    const mask = decodeRle({
      order: "row-major",
      width: 3,
      height: 2,
      counts: [4, 1, 1],
    });
    // only pixel (a=1, b=1) is set
    expect(maskGet(mask, 1, 1)).toBe(true);
    expect(maskGet(mask, 1, 0)).toBe(false);
    expect(maskGet(mask, 0, 1)).toBe(false);
    expect(firstSetPixel(mask)).toEqual({ a: 1, b: 1 });
  });

  it("treats out-of-bounds lookups as unset", () => {
    const mask = fullMask(2, 2);
    expect(maskGet(mask, -1, 0)).toBe(false);
    expect(maskGet(mask, 0, 2)).toBe(false);
    expect(maskCount(mask)).toBe(4);
  });
});

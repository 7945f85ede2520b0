import { describe, expect, it } from "vitest";

import { decodePpm, integerScale } from "../src/ppm.js";

function ppmBytes(width: number, height: number, pixels: number[]): Uint8Array {
  const header = new TextEncoder().encode(`P6\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + pixels.length);
  out.set(header);
  out.set(pixels, header.length);
  return out;
}

describe("decodePpm", () => {
  it("decodes a 2x1 image to RGBA", () => {
    const image = decodePpm(ppmBytes(2, 1, [255, 0, 0, 0, 128, 255]));
    expect(image.width).toBe(2);
    expect(image.height).toBe(1);
    expect([...image.rgba]).toEqual([255, 0, 0, 255, 0, 128, 255, 255]);
  });

  it("skips header comments", () => {
    const header = new TextEncoder().encode("P6\n# a comment\n1 1\n255\n");
    const bytes = new Uint8Array([...header, 9, 8, 7]);
    const image = decodePpm(bytes);
    expect([...image.rgba]).toEqual([9, 8, 7, 255]);
  });

  it("rejects non-P6 streams", () => {
    expect(() => decodePpm(new TextEncoder().encode("P3\n1 1\n255\n"))).toThrow(/P6/);
  });

  it("rejects truncated pixel data", () => {
    expect(() => decodePpm(ppmBytes(2, 2, [1, 2, 3]))).toThrow(/truncated/);
  });

  it("rejects non-255 maxval", () => {
    const bytes = new TextEncoder().encode("P6\n1 1\n65535\n");
    expect(() => decodePpm(new Uint8Array([...bytes, 0, 0, 0]))).toThrow(/maxval/);
  });
});

describe("integerScale", () => {
  it("floors to the largest integer factor", () => {
    expect(integerScale(64, 256)).toBe(4);
    expect(integerScale(64, 300)).toBe(4);
    expect(integerScale(64, 127)).toBe(1);
  });

  it("never drops below 1", () => {
    expect(integerScale(64, 10)).toBe(1);
  });
});

import { describe, expect, it } from "vitest";

import { MaskLayer } from "../src/mask.js";
import type { DecodedImage } from "../src/png.js";

function flatImage(width: number, height: number, value: number): DecodedImage {
  return { width, height, channels: 1,
           data: new Uint8Array(width * height).fill(value) };
}

describe("rectangle tool", () => {
  it("full-canvas rectangle with feather 0 gives mask = 255 everywhere", () => {
    const mask = new MaskLayer(48, 32);
    mask.drawRectangle(0, 0, 47, 31, 0);
    expect(mask.data.every((v) => v === 255)).toBe(true);
    expect(mask.isEmpty()).toBe(false);
  });

  it("no strokes leaves the mask = 0 (global mode)", () => {
    const mask = new MaskLayer(16, 16);
    expect(mask.isEmpty()).toBe(true);
    expect(mask.data.every((v) => v === 0)).toBe(true);
  });

  it("covers exactly the requested box, any corner order", () => {
    const mask = new MaskLayer(10, 10);
    mask.drawRectangle(7, 8, 2, 3, 0);
    for (let y = 0; y < 10; y++) {
      for (let x = 0; x < 10; x++) {
        const inside = x >= 2 && x <= 7 && y >= 3 && y <= 8;
        expect(mask.data[y * 10 + x]).toBe(inside ? 255 : 0);
      }
    }
  });

  it("feathering softens the boundary but keeps the interior strong", () => {
    const mask = new MaskLayer(40, 40);
    mask.drawRectangle(10, 10, 29, 29, 4);
    const center = mask.data[20 * 40 + 20];
    const edge = mask.data[10 * 40 + 10];
    const outside = mask.data[2 * 40 + 2];
    expect(center).toBe(255);
    expect(edge).toBeGreaterThan(0);
    expect(edge).toBeLessThan(255);
    expect(outside).toBe(0);
  });
});

describe("undo", () => {
  it("restores the previous raster exactly after one stroke", () => {
    const mask = new MaskLayer(20, 20);
    mask.drawRectangle(1, 1, 6, 6, 0);
    const before = mask.data.slice();
    mask.drawBrush([{ x: 12, y: 12 }, { x: 18, y: 15 }], 3, 2);
    expect(mask.data).not.toEqual(before);
    expect(mask.undo()).toBe(true);
    expect(mask.data).toEqual(before);
  });

  it("holds at least 10 levels", () => {
    const mask = new MaskLayer(12, 12);
    const snapshots: Uint8Array[] = [];
    for (let i = 0; i < 10; i++) {
      snapshots.push(mask.data.slice());
      mask.drawRectangle(i, 0, i, 11, 0);
    }
    for (let i = 9; i >= 0; i--) {
      expect(mask.undo()).toBe(true);
      expect(mask.data).toEqual(snapshots[i]);
    }
  });

  it("returns false with nothing to undo", () => {
    expect(new MaskLayer(4, 4).undo()).toBe(false);
  });
});

describe("brush tool", () => {
  it("paints a connected stroke along the pointer path", () => {
    const mask = new MaskLayer(30, 30);
    mask.drawBrush([{ x: 5, y: 15 }, { x: 25, y: 15 }], 2, 0);
    for (let x = 5; x <= 25; x++) {
      expect(mask.data[15 * 30 + x]).toBe(255);
    }
    expect(mask.data[2 * 30 + 2]).toBe(0);
  });

  it("accumulates strokes with max compositing", () => {
    const mask = new MaskLayer(20, 20);
    mask.drawBrush([{ x: 5, y: 5 }], 3, 0);
    const after = mask.data[5 * 20 + 5];
    mask.drawBrush([{ x: 5, y: 5 }], 3, 3);  // soft repaint cannot darken
    expect(mask.data[5 * 20 + 5]).toBe(after);
  });
});

describe("fill tool", () => {
  it("selects the contiguous luminance region around the click", () => {
    const img = flatImage(12, 12, 40);
    // bright 4x4 block in the corner
    for (let y = 0; y < 4; y++) {
      for (let x = 0; x < 4; x++) {
        img.data[y * 12 + x] = 220;
      }
    }
    const mask = new MaskLayer(12, 12);
    mask.fill(img, 1, 1, 16, 0);
    for (let y = 0; y < 12; y++) {
      for (let x = 0; x < 12; x++) {
        const inBlock = x < 4 && y < 4;
        expect(mask.data[y * 12 + x]).toBe(inBlock ? 255 : 0);
      }
    }
  });

  it("tolerance widens the selection", () => {
    const img = flatImage(8, 8, 100);
    for (let x = 0; x < 8; x++) {
      img.data[3 * 8 + x] = 130;        // a slightly brighter stripe
    }
    const tight = new MaskLayer(8, 8);
    tight.fill(img, 0, 0, 8, 0);
    expect(tight.data[3 * 8 + 4]).toBe(0);
    const loose = new MaskLayer(8, 8);
    loose.fill(img, 0, 0, 48, 0);
    expect(loose.data[3 * 8 + 4]).toBe(255);
  });

  it("rejects clicks outside the canvas and mismatched images", () => {
    const mask = new MaskLayer(8, 8);
    expect(() => mask.fill(flatImage(8, 8, 0), 20, 2, 8)).toThrow(/outside/);
    expect(() => mask.fill(flatImage(9, 8, 0), 2, 2, 8)).toThrow(/match/);
  });
});

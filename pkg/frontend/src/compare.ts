/** Pixel-space helpers for the comparison view and its PNG export. */

import type { DecodedImage } from "./png.js";
import { encodeRgbPng } from "./png.js";

function requireRgb(img: DecodedImage, name: string): void {
  if (img.channels !== 3) {
    throw new Error(`${name} must be RGB, got ${img.channels} channels`);
  }
}

function requireSameShape(a: DecodedImage, b: DecodedImage): void {
  if (a.width !== b.width || a.height !== b.height) {
    throw new Error(`shape mismatch: ${a.width}x${a.height} vs ` +
                    `${b.width}x${b.height}`);
  }
}

/** Left of the wipe column comes from `a`, the rest from `b`. */
export function wipeComposite(a: DecodedImage, b: DecodedImage,
                              wipeX: number): DecodedImage {
  requireRgb(a, "a");
  requireRgb(b, "b");
  requireSameShape(a, b);
  const split = Math.min(a.width, Math.max(0, Math.round(wipeX)));
  const data = new Uint8Array(a.data.length);
  const stride = a.width * 3;
  for (let y = 0; y < a.height; y++) {
    const row = y * stride;
    data.set(a.data.subarray(row, row + split * 3), row);
    data.set(b.data.subarray(row + split * 3, row + stride), row + split * 3);
  }
  return { width: a.width, height: a.height, channels: 3, data };
}

/** Count of pixel positions whose RGB values differ at all. */
export function pixelDiffCount(a: DecodedImage, b: DecodedImage): number {
  requireRgb(a, "a");
  requireRgb(b, "b");
  requireSameShape(a, b);
  let count = 0;
  for (let i = 0; i < a.data.length; i += 3) {
    if (a.data[i] !== b.data[i] || a.data[i + 1] !== b.data[i + 1] ||
        a.data[i + 2] !== b.data[i + 2]) {
      count++;
    }
  }
  return count;
}

/** |a - b| per channel, stretched so small differences are visible. */
export function diffImage(a: DecodedImage, b: DecodedImage,
                          gain = 8): DecodedImage {
  requireRgb(a, "a");
  requireRgb(b, "b");
  requireSameShape(a, b);
  const data = new Uint8Array(a.data.length);
  for (let i = 0; i < data.length; i++) {
    data[i] = Math.min(255, Math.abs(a.data[i] - b.data[i]) * gain);
  }
  return { width: a.width, height: a.height, channels: 3, data };
}

/** One PNG holding the wipe composite at the chosen column. */
export function exportComparison(a: DecodedImage, b: DecodedImage,
                                 wipeX: number): Uint8Array {
  const composite = wipeComposite(a, b, wipeX);
  return encodeRgbPng(composite.data, composite.width, composite.height);
}

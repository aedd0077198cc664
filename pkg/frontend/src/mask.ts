/** Region-of-interest mask layer backed by a soft [0,255] raster.
 *
 * Every paint operation rasterizes a binary region first; feathering blurs
 * that region before it is max-composited into the layer, so repeated
 * strokes accumulate without clipping artifacts. The undo stack restores
 * previous rasters exactly.
 */

import type { DecodedImage } from "./png.js";

export type Tool = "brush" | "rectangle" | "fill";

export interface Point {
  x: number;
  y: number;
}

const UNDO_DEPTH = 16;

/** Separable box blur with clamped edges, applied twice for smoothness. */
function blurBinary(region: Float32Array, width: number, height: number,
                    radius: number): Float32Array {
  if (radius <= 0) {
    return region;
  }
  const r = Math.round(radius);
  let src = region;
  for (let pass = 0; pass < 2; pass++) {
    const horiz = new Float32Array(src.length);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        let acc = 0;
        for (let k = -r; k <= r; k++) {
          const xx = Math.min(width - 1, Math.max(0, x + k));
          acc += src[y * width + xx];
        }
        horiz[y * width + x] = acc / (2 * r + 1);
      }
    }
    const vert = new Float32Array(src.length);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        let acc = 0;
        for (let k = -r; k <= r; k++) {
          const yy = Math.min(height - 1, Math.max(0, y + k));
          acc += horiz[yy * width + x];
        }
        vert[y * width + x] = acc / (2 * r + 1);
      }
    }
    src = vert;
  }
  return src;
}

function luminance(image: DecodedImage, index: number): number {
  const base = index * image.channels;
  if (image.channels === 1) {
    return image.data[base];
  }
  return 0.299 * image.data[base] + 0.587 * image.data[base + 1] +
         0.114 * image.data[base + 2];
}

export class MaskLayer {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0) {
      throw new Error(`bad mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  isEmpty(): boolean {
    return this.data.every((v) => v === 0);
  }

  private snapshot(): void {
    this.undoStack.push(this.data.slice());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) {
      return false;
    }
    this.data = prev;
    return true;
  }

  clear(): void {
    this.snapshot();
    this.data = new Uint8Array(this.width * this.height);
  }

  private composite(region: Float32Array, feather: number): void {
    this.snapshot();
    const soft = blurBinary(region, this.width, this.height, feather);
    for (let i = 0; i < this.data.length; i++) {
      const v = Math.round(soft[i] * 255);
      if (v > this.data[i]) {
        this.data[i] = v;
      }
    }
  }

  drawRectangle(x0: number, y0: number, x1: number, y1: number,
                feather = 0): void {
    const left = Math.max(0, Math.min(x0, x1));
    const top = Math.max(0, Math.min(y0, y1));
    const right = Math.min(this.width - 1, Math.max(x0, x1));
    const bottom = Math.min(this.height - 1, Math.max(y0, y1));
    const region = new Float32Array(this.width * this.height);
    for (let y = top; y <= bottom; y++) {
      for (let x = left; x <= right; x++) {
        region[y * this.width + x] = 1;
      }
    }
    this.composite(region, feather);
  }

  /** Stamp circles along the polyline traced by the pointer events. */
  drawBrush(points: Point[], radius: number, feather = 0): void {
    if (points.length === 0) {
      return;
    }
    const region = new Float32Array(this.width * this.height);
    const stamp = (cx: number, cy: number) => {
      const r = Math.max(1, radius);
      for (let y = Math.max(0, Math.floor(cy - r));
           y <= Math.min(this.height - 1, Math.ceil(cy + r)); y++) {
        for (let x = Math.max(0, Math.floor(cx - r));
             x <= Math.min(this.width - 1, Math.ceil(cx + r)); x++) {
          if ((x - cx) ** 2 + (y - cy) ** 2 <= r * r) {
            region[y * this.width + x] = 1;
          }
        }
      }
    };
    stamp(points[0].x, points[0].y);
    for (let i = 1; i < points.length; i++) {
      const a = points[i - 1];
      const b = points[i];
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        stamp(a.x + ((b.x - a.x) * s) / steps, a.y + ((b.y - a.y) * s) / steps);
      }
    }
    this.composite(region, feather);
  }

  /** Flood fill on the luminance-quantized source image (click-to-select).
   *
   * An approximation of promptable segmentation: contiguous pixels whose
   * quantized luminance stays within `tolerance` of the seed are selected.
   */
  fill(image: DecodedImage, seedX: number, seedY: number, tolerance: number,
       feather = 0): void {
    if (image.width !== this.width || image.height !== this.height) {
      throw new Error("fill image does not match mask dimensions");
    }
    const sx = Math.round(seedX);
    const sy = Math.round(seedY);
    if (sx < 0 || sy < 0 || sx >= this.width || sy >= this.height) {
      throw new Error(`fill seed (${seedX}, ${seedY}) outside the canvas`);
    }
    const region = new Float32Array(this.width * this.height);
    const quant = (i: number) => Math.round(luminance(image, i) / 8) * 8;
    const target = quant(sy * this.width + sx);
    const stack = [sy * this.width + sx];
    region[stack[0]] = 1;
    while (stack.length > 0) {
      const idx = stack.pop()!;
      const x = idx % this.width;
      const y = (idx - x) / this.width;
      for (const [nx, ny] of [[x - 1, y], [x + 1, y], [x, y - 1], [x, y + 1]]) {
        if (nx < 0 || ny < 0 || nx >= this.width || ny >= this.height) {
          continue;
        }
        const nidx = ny * this.width + nx;
        if (region[nidx] === 0 && Math.abs(quant(nidx) - target) <= tolerance) {
          region[nidx] = 1;
          stack.push(nidx);
        }
      }
    }
    this.composite(region, feather);
  }
}

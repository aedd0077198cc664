/** Browser wiring: canvas painting, control panel, job lifecycle, compare. */

import { ApiError, buildEnhanceForm, fetchPreview, fetchResult, listModels,
         pollJob, progressPercent, realDeps, submitJob } from "./api.js";
import type { Controls } from "./controls.js";
import { RANGES, clampControls, defaultControls,
         validateControls } from "./controls.js";
import { diffImage, exportComparison, wipeComposite } from "./compare.js";
import type { HistoryEntry } from "./history.js";
import { History } from "./history.js";
import type { Point } from "./mask.js";
import { MaskLayer } from "./mask.js";
import type { DecodedImage } from "./png.js";
import { decodePng, encodeGrayPng } from "./png.js";

const base = "";                        // same origin as the service

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

interface Session {
  image: DecodedImage | null;
  imagePng: Uint8Array | null;
  mask: MaskLayer | null;
  controls: Controls;
  pollCancelled: { flag: boolean } | null;
  history: History;
}

const session: Session = {
  image: null,
  imagePng: null,
  mask: null,
  controls: defaultControls(),
  pollCancelled: null,
  history: new History(),
};

// ---------------------------------------------------------------- canvas

const imageCanvas = el<HTMLCanvasElement>("image-canvas");
const maskCanvas = el<HTMLCanvasElement>("mask-canvas");

function toRgba(img: DecodedImage): ImageData {
  const rgba = new Uint8ClampedArray(img.width * img.height * 4);
  for (let i = 0, o = 0; i < img.width * img.height; i++, o += 4) {
    const s = i * img.channels;
    if (img.channels === 1) {
      rgba[o] = rgba[o + 1] = rgba[o + 2] = img.data[s];
    } else {
      rgba[o] = img.data[s];
      rgba[o + 1] = img.data[s + 1];
      rgba[o + 2] = img.data[s + 2];
    }
    rgba[o + 3] = img.channels === 4 ? img.data[s + 3] : 255;
  }
  return new ImageData(rgba, img.width, img.height);
}

function redrawImage(): void {
  if (!session.image) {
    return;
  }
  imageCanvas.width = session.image.width;
  imageCanvas.height = session.image.height;
  maskCanvas.width = session.image.width;
  maskCanvas.height = session.image.height;
  imageCanvas.getContext("2d")!.putImageData(toRgba(session.image), 0, 0);
  redrawMask();
}

function redrawMask(): void {
  if (!session.mask) {
    return;
  }
  const { width, height, data } = session.mask;
  const overlay = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    overlay[i * 4] = 255;               // red tint, alpha from the raster
    overlay[i * 4 + 3] = data[i] >> 1;
  }
  maskCanvas.getContext("2d")!
    .putImageData(new ImageData(overlay, width, height), 0, 0);
}

function canvasPoint(event: PointerEvent): Point {
  const rect = maskCanvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * maskCanvas.width,
    y: ((event.clientY - rect.top) / rect.height) * maskCanvas.height,
  };
}

let dragStart: Point | null = null;
let strokePoints: Point[] = [];

function currentTool(): string {
  return el<HTMLSelectElement>("tool").value;
}

function featherPx(): number {
  return Number(el<HTMLInputElement>("feather").value);
}

maskCanvas.addEventListener("pointerdown", (event) => {
  if (!session.mask || !session.image) {
    return;
  }
  maskCanvas.setPointerCapture(event.pointerId);
  const p = canvasPoint(event);
  const tool = currentTool();
  if (tool === "brush") {
    strokePoints = [p];
  } else if (tool === "rectangle") {
    dragStart = p;
  } else {
    session.mask.fill(session.image, p.x, p.y,
                      Number(el<HTMLInputElement>("tolerance").value),
                      featherPx());
    redrawMask();
  }
});

maskCanvas.addEventListener("pointermove", (event) => {
  if (currentTool() === "brush" && strokePoints.length > 0) {
    strokePoints.push(canvasPoint(event));
  }
});

maskCanvas.addEventListener("pointerup", (event) => {
  if (!session.mask) {
    return;
  }
  const tool = currentTool();
  if (tool === "brush" && strokePoints.length > 0) {
    session.mask.drawBrush(strokePoints,
                           Number(el<HTMLInputElement>("brush-radius").value),
                           featherPx());
    strokePoints = [];
  } else if (tool === "rectangle" && dragStart) {
    const p = canvasPoint(event);
    session.mask.drawRectangle(Math.round(dragStart.x), Math.round(dragStart.y),
                               Math.round(p.x), Math.round(p.y), featherPx());
    dragStart = null;
  }
  redrawMask();
});

el<HTMLButtonElement>("mask-undo").addEventListener("click", () => {
  if (session.mask?.undo()) {
    redrawMask();
  }
});

el<HTMLButtonElement>("mask-clear").addEventListener("click", () => {
  session.mask?.clear();
  redrawMask();
});

// ---------------------------------------------------------------- controls

function showError(field: string, message: string): void {
  const node = document.querySelector(`[data-error-for="${field}"]`);
  if (node) {
    node.textContent = message;
  } else {
    el<HTMLSpanElement>("status").textContent = `${field}: ${message}`;
  }
}

function clearErrors(): void {
  document.querySelectorAll("[data-error-for]")
    .forEach((node) => { node.textContent = ""; });
}

function readControls(): Controls {
  return clampControls({
    lambda: Number(el<HTMLInputElement>("lambda").value),
    guidance: Number(el<HTMLInputElement>("guidance").value),
    steps: Number(el<HTMLInputElement>("steps").value),
    seed: el<HTMLInputElement>("seed").value,
    seedLock: el<HTMLInputElement>("seed-lock").checked,
    modelId: el<HTMLSelectElement>("model").value,
  });
}

function syncControlLabels(): void {
  el<HTMLSpanElement>("lambda-value").textContent =
    Number(el<HTMLInputElement>("lambda").value).toFixed(2);
  el<HTMLSpanElement>("guidance-value").textContent =
    Number(el<HTMLInputElement>("guidance").value).toFixed(2);
}

for (const id of ["lambda", "guidance"]) {
  el<HTMLInputElement>(id).addEventListener("input", syncControlLabels);
}

el<HTMLInputElement>("file").addEventListener("change", async (event) => {
  const input = event.target as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) {
    return;
  }
  const bytes = new Uint8Array(await file.arrayBuffer());
  try {
    session.image = decodePng(bytes);
  } catch (err) {
    el<HTMLSpanElement>("status").textContent = String(err);
    return;
  }
  session.imagePng = bytes;
  session.mask = new MaskLayer(session.image.width, session.image.height);
  redrawImage();
  el<HTMLSpanElement>("status").textContent =
    `${session.image.width}x${session.image.height} loaded`;
});

// ---------------------------------------------------------------- submit

function setProgress(fraction: number): void {
  const percent = progressPercent(fraction);
  el<HTMLProgressElement>("progress").value = percent;
  el<HTMLSpanElement>("progress-text").textContent = `${percent}%`;
}

async function showPreview(jobId: string): Promise<void> {
  try {
    const png = await fetchPreview(base, jobId);
    el<HTMLImageElement>("preview").src =
      URL.createObjectURL(new Blob([png.buffer.slice(0) as ArrayBuffer],
                                   { type: "image/png" }));
  } catch {
    // preview may not exist yet; keep the last one
  }
}

el<HTMLButtonElement>("submit").addEventListener("click", async () => {
  if (!session.imagePng || !session.mask) {
    el<HTMLSpanElement>("status").textContent = "load an image first";
    return;
  }
  clearErrors();
  session.controls = readControls();
  const errors = validateControls(session.controls);
  if (errors.length > 0) {
    for (const e of errors) {
      showError(e.field, e.message);
    }
    return;
  }
  if (session.controls.seedLock && session.controls.seed.trim() === "") {
    session.controls = { ...session.controls,
                         seed: String(Math.floor(Math.random() * 2 ** 31)) };
    el<HTMLInputElement>("seed").value = session.controls.seed;
  }
  const maskPng = session.mask.isEmpty()
    ? null                              // empty mask means global enhancement
    : encodeGrayPng(session.mask.data, session.mask.width,
                    session.mask.height);

  session.pollCancelled && (session.pollCancelled.flag = true);
  const cancelled = { flag: false };
  session.pollCancelled = cancelled;
  setProgress(0);
  el<HTMLSpanElement>("status").textContent = "submitting";
  try {
    const form = buildEnhanceForm(session.imagePng, maskPng, session.controls);
    const jobId = await submitJob(base, form);
    el<HTMLSpanElement>("status").textContent = `job ${jobId.slice(0, 8)}`;
    const state = await pollJob(base, jobId, realDeps, {
      intervalMs: 500,
      isCancelled: () => cancelled.flag,
      onUpdate: (s) => {
        setProgress(s.progress);
        if (s.preview_url) {
          void showPreview(jobId);
        }
      },
    });
    if (state.status === "failed") {
      el<HTMLSpanElement>("status").textContent = state.error ?? "job failed";
      return;
    }
    const png = await fetchResult(base, jobId);
    el<HTMLImageElement>("preview").src =
      URL.createObjectURL(new Blob([png.buffer.slice(0) as ArrayBuffer],
                                   { type: "image/png" }));
    session.history.add({
      jobId,
      controls: session.controls,
      resultPng: png,
      maskedRegion: maskPng !== null,
    });
    renderHistory();
    el<HTMLSpanElement>("status").textContent = "done";
  } catch (err) {
    if (err instanceof ApiError && err.field) {
      showError(err.field, err.message);
    } else if (!(err instanceof ApiError && err.message === "polling cancelled")) {
      el<HTMLSpanElement>("status").textContent = String(err);
    }
  }
});

// ---------------------------------------------------------------- history

function entryLabel(entry: HistoryEntry): string {
  const mask = entry.maskedRegion ? ", masked" : "";
  return `λ=${entry.controls.lambda.toFixed(2)} s=` +
         `${entry.controls.guidance.toFixed(2)} steps=${entry.controls.steps}` +
         `${mask}`;
}

function renderHistory(): void {
  const list = el<HTMLUListElement>("history");
  list.innerHTML = "";
  session.history.list().forEach((entry, index) => {
    const item = document.createElement("li");
    const img = document.createElement("img");
    img.src = URL.createObjectURL(
      new Blob([entry.resultPng.buffer.slice(0) as ArrayBuffer],
               { type: "image/png" }));
    img.title = entryLabel(entry);
    item.append(img, document.createTextNode(entryLabel(entry)));
    item.addEventListener("click", () => selectForCompare(index));
    list.append(item);
  });
}

// ---------------------------------------------------------------- compare

let compareA = -1;
let compareB = -1;

function selectForCompare(index: number): void {
  if (compareA < 0 || compareB >= 0) {
    compareA = index;
    compareB = -1;
  } else {
    compareB = index;
  }
  renderCompare();
}

function renderCompare(): void {
  const label = el<HTMLSpanElement>("compare-label");
  if (compareA < 0) {
    label.textContent = "pick two history entries";
    return;
  }
  if (compareB < 0) {
    label.textContent = `A: ${entryLabel(session.history.at(compareA))}` +
                        " (pick a second entry)";
    return;
  }
  const a = session.history.at(compareA);
  const b = session.history.at(compareB);
  label.textContent =
    `A: ${entryLabel(a)}  vs  B: ${entryLabel(b)}`;
  const canvas = el<HTMLCanvasElement>("compare-canvas");
  const imgA = decodePng(a.resultPng);
  const imgB = decodePng(b.resultPng);
  if (imgA.width !== imgB.width || imgA.height !== imgB.height) {
    label.textContent += " (different sizes, cannot compare)";
    return;
  }
  canvas.width = imgA.width;
  canvas.height = imgA.height;
  const wipe = Number(el<HTMLInputElement>("wipe").value) / 100;
  const mode = el<HTMLSelectElement>("compare-mode").value;
  const shown = mode === "diff"
    ? diffImage(imgA, imgB)
    : wipeComposite(imgA, imgB, Math.round(wipe * imgA.width));
  canvas.getContext("2d")!.putImageData(toRgba(shown), 0, 0);
}

el<HTMLInputElement>("wipe").addEventListener("input", renderCompare);
el<HTMLSelectElement>("compare-mode").addEventListener("change", renderCompare);

el<HTMLButtonElement>("export").addEventListener("click", () => {
  if (compareA < 0 || compareB < 0) {
    return;
  }
  const a = decodePng(session.history.at(compareA).resultPng);
  const b = decodePng(session.history.at(compareB).resultPng);
  const wipe = Number(el<HTMLInputElement>("wipe").value) / 100;
  const png = exportComparison(a, b, Math.round(wipe * a.width));
  const link = document.createElement("a");
  link.href = URL.createObjectURL(
    new Blob([png.buffer.slice(0) as ArrayBuffer], { type: "image/png" }));
  link.download = "comparison.png";
  link.click();
});

// ---------------------------------------------------------------- startup

async function start(): Promise<void> {
  el<HTMLInputElement>("lambda").min = String(RANGES.lambda.min);
  el<HTMLInputElement>("lambda").max = String(RANGES.lambda.max);
  syncControlLabels();
  try {
    const models = await listModels(base);
    const select = el<HTMLSelectElement>("model");
    select.innerHTML = "";
    for (const model of models) {
      const option = document.createElement("option");
      option.value = model.model_id;
      option.textContent = model.mask_mode
        ? `${model.model_id} (mask-capable)` : model.model_id;
      select.append(option);
    }
  } catch (err) {
    el<HTMLSpanElement>("status").textContent =
      `service unreachable: ${String(err)}`;
  }
}

void start();

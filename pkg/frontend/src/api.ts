/** HTTP client for the enhancement service.
 *
 * fetch and sleep are injectable so tests can drive the polling loop with
 * scripted responses and no real timers.
 */

import type { Controls } from "./controls.js";
import { formFields } from "./controls.js";

export interface Deps {
  fetch: typeof fetch;
  sleep: (ms: number) => Promise<void>;
}

export const realDeps: Deps = {
  fetch: (...args) => fetch(...args),
  sleep: (ms) => new Promise((resolve) => setTimeout(resolve, ms)),
};

export interface ModelInfo {
  model_id: string;
  mask_mode: boolean;
  embed_dim: number;
}

export interface JobState {
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  preview_url?: string;
  error?: string;
}

/** Server-reported failure; `field` points at the offending control. */
export class ApiError extends Error {
  constructor(message: string, readonly status: number,
              readonly field?: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) {
    return;
  }
  let field: string | undefined;
  let message = `HTTP ${response.status}`;
  try {
    const body = await response.json();
    const detail = body.detail ?? body;
    if (typeof detail === "object" && detail !== null) {
      field = detail.field;
      message = detail.message ?? detail.error ?? message;
    } else if (typeof detail === "string") {
      message = detail;
    }
    if (typeof body.error === "string") {
      message = body.error;
    }
  } catch {
    // non-JSON error body, keep the status line
  }
  throw new ApiError(message, response.status, field);
}

export async function listModels(base: string,
                                 deps: Deps = realDeps): Promise<ModelInfo[]> {
  const response = await deps.fetch(`${base}/v1/models`);
  await raiseForStatus(response);
  return response.json();
}

export function buildEnhanceForm(imagePng: Uint8Array,
                                 maskPng: Uint8Array | null,
                                 controls: Controls): FormData {
  const form = new FormData();
  form.set("image", new Blob([imagePng.buffer.slice(0) as ArrayBuffer],
                             { type: "image/png" }), "image.png");
  if (maskPng) {
    form.set("mask", new Blob([maskPng.buffer.slice(0) as ArrayBuffer],
                              { type: "image/png" }), "mask.png");
  }
  for (const [key, value] of Object.entries(formFields(controls))) {
    form.set(key, value);
  }
  return form;
}

export async function submitJob(base: string, form: FormData,
                                deps: Deps = realDeps): Promise<string> {
  const response = await deps.fetch(`${base}/v1/enhance`,
                                    { method: "POST", body: form });
  await raiseForStatus(response);
  const body = await response.json();
  return body.job_id;
}

/** Fraction in [0, 1] to the whole percent the progress bar shows. */
export function progressPercent(fraction: number): number {
  return Math.round(Math.min(1, Math.max(0, fraction)) * 100);
}

export interface PollOptions {
  intervalMs?: number;
  /** Consecutive network failures tolerated before giving up. */
  maxRetries?: number;
  onUpdate?: (state: JobState) => void;
  isCancelled?: () => boolean;
}

/** Poll until the job settles; network loss retries with backoff and the
 * same job id. */
export async function pollJob(base: string, jobId: string,
                              deps: Deps = realDeps,
                              options: PollOptions = {}): Promise<JobState> {
  const interval = options.intervalMs ?? 500;
  const maxRetries = options.maxRetries ?? 5;
  let failures = 0;
  for (;;) {
    if (options.isCancelled?.()) {
      throw new ApiError("polling cancelled", 0);
    }
    try {
      const response = await deps.fetch(`${base}/v1/jobs/${jobId}`);
      await raiseForStatus(response);
      const state: JobState = await response.json();
      failures = 0;
      options.onUpdate?.(state);
      if (state.status === "done" || state.status === "failed") {
        return state;
      }
    } catch (err) {
      if (err instanceof ApiError && err.status > 0) {
        throw err;                       // a real server answer, not a drop
      }
      failures += 1;
      if (failures > maxRetries) {
        throw new ApiError(`lost connection after ${maxRetries} retries`, 0);
      }
      await deps.sleep(interval * 2 ** (failures - 1));
      continue;
    }
    await deps.sleep(interval);
  }
}

export async function fetchBinary(base: string, path: string,
                                  deps: Deps = realDeps): Promise<Uint8Array> {
  const response = await deps.fetch(`${base}${path}`);
  await raiseForStatus(response);
  return new Uint8Array(await response.arrayBuffer());
}

export function fetchResult(base: string, jobId: string,
                            deps: Deps = realDeps): Promise<Uint8Array> {
  return fetchBinary(base, `/v1/jobs/${jobId}/result`, deps);
}

export function fetchPreview(base: string, jobId: string,
                             deps: Deps = realDeps): Promise<Uint8Array> {
  return fetchBinary(base, `/v1/jobs/${jobId}/preview`, deps);
}

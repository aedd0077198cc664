import { describe, expect, it } from "vitest";

import { ApiError, buildEnhanceForm, fetchResult, listModels, pollJob,
         progressPercent, submitJob } from "../src/api.js";
import type { Deps } from "../src/api.js";
import { defaultControls } from "../src/controls.js";

type Handler = (url: string, init?: RequestInit) => Response | Error;

function scripted(handlers: Handler[]) {
  const calls: string[] = [];
  const sleeps: number[] = [];
  const deps: Deps = {
    fetch: (async (url: string, init?: RequestInit) => {
      calls.push(String(url));
      const handler = handlers.shift();
      if (!handler) {
        throw new Error(`unexpected request ${url}`);
      }
      const out = handler(String(url), init);
      if (out instanceof Error) {
        throw out;
      }
      return out;
    }) as typeof fetch,
    sleep: async (ms: number) => {
      sleeps.push(ms);
    },
  };
  return { deps, calls, sleeps };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("submitJob", () => {
  it("posts the form and returns the job id", async () => {
    const { deps, calls } = scripted([
      (url, init) => {
        expect(init?.method).toBe("POST");
        expect(init?.body).toBeInstanceOf(FormData);
        return json(202, { job_id: "j123" });
      },
    ]);
    const form = buildEnhanceForm(new Uint8Array([1]), null, defaultControls());
    expect(await submitJob("http://svc", form, deps)).toBe("j123");
    expect(calls).toEqual(["http://svc/v1/enhance"]);
  });

  it("maps a 422 onto the offending control", async () => {
    const { deps } = scripted([
      () => json(422, { detail: { field: "lambda",
                                  message: "must lie in [0,1], got 1.4" } }),
    ]);
    const form = buildEnhanceForm(new Uint8Array([1]), null, defaultControls());
    const err = await submitJob("http://svc", form, deps).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.field).toBe("lambda");
    expect(err.status).toBe(422);
    expect(err.message).toMatch(/\[0,1\]/);
  });

  it("surfaces a full queue", async () => {
    const { deps } = scripted([() => json(429, { error: "job queue is full" })]);
    const form = buildEnhanceForm(new Uint8Array([1]), null, defaultControls());
    const err = await submitJob("http://svc", form, deps).catch((e) => e);
    expect(err.status).toBe(429);
    expect(err.message).toBe("job queue is full");
  });
});

describe("buildEnhanceForm", () => {
  it("includes lambda, omits the mask part when there is none", () => {
    const form = buildEnhanceForm(new Uint8Array([9]), null,
                                  { ...defaultControls(), lambda: 0.7 });
    expect(form.get("lambda")).toBe("0.7");
    expect(form.get("mask")).toBeNull();
    expect(form.get("image")).toBeInstanceOf(Blob);
  });

  it("attaches the mask bytes when given", async () => {
    const mask = new Uint8Array([5, 6, 7]);
    const form = buildEnhanceForm(new Uint8Array([9]), mask,
                                  defaultControls());
    const part = form.get("mask") as Blob;
    expect(new Uint8Array(await part.arrayBuffer())).toEqual(mask);
  });
});

describe("pollJob", () => {
  const state = (status: string, progress: number, extra = {}) =>
    json(200, { status, progress, ...extra });

  it("reports progress through to completion", async () => {
    const { deps, sleeps } = scripted([
      () => state("queued", 0),
      () => state("running", 0.4, { preview_url: "/v1/jobs/j/preview" }),
      () => state("running", 0.8),
      () => state("done", 1),
    ]);
    const seen: number[] = [];
    const final = await pollJob("http://svc", "j", deps, {
      onUpdate: (s) => seen.push(s.progress),
    });
    expect(final.status).toBe("done");
    expect(seen).toEqual([0, 0.4, 0.8, 1]);
    expect(sleeps).toEqual([500, 500, 500]);    // no sleep after the last poll
  });

  it("retries network loss with backoff and the same job id", async () => {
    const { deps, calls, sleeps } = scripted([
      () => state("running", 0.5),
      () => new TypeError("fetch failed"),
      () => new TypeError("fetch failed"),
      () => state("done", 1),
    ]);
    const final = await pollJob("http://svc", "j77", deps, {});
    expect(final.status).toBe("done");
    expect(sleeps).toEqual([500, 500, 1000]);   // poll, then 2 backoffs
    expect(new Set(calls)).toEqual(new Set(["http://svc/v1/jobs/j77"]));
  });

  it("gives up after the retry budget", async () => {
    const { deps } = scripted(
      Array.from({ length: 4 }, () => () => new TypeError("down")));
    const err = await pollJob("http://svc", "j", deps, { maxRetries: 3 })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(0);
    expect(err.message).toMatch(/lost connection/);
  });

  it("does not retry a real server error", async () => {
    const { deps, calls } = scripted([() => json(404, { detail: "no job j" })]);
    const err = await pollJob("http://svc", "j", deps).catch((e) => e);
    expect(err.status).toBe(404);
    expect(calls.length).toBe(1);
  });

  it("returns the failed state with its error text", async () => {
    const { deps } = scripted([
      () => state("failed", 0.2, { error: "RuntimeError: boom" }),
    ]);
    const final = await pollJob("http://svc", "j", deps);
    expect(final.status).toBe("failed");
    expect(final.error).toBe("RuntimeError: boom");
  });

  it("stops when cancelled", async () => {
    let cancelled = false;
    const { deps } = scripted([
      () => {
        cancelled = true;               // a new submission replaced this job
        return state("running", 0.1);
      },
    ]);
    const err = await pollJob("http://svc", "j", deps, {
      isCancelled: () => cancelled,
    }).catch((e) => e);
    expect(err.message).toBe("polling cancelled");
  });
});

describe("binary fetches and progress mapping", () => {
  it("fetchResult returns the raw bytes", async () => {
    const payload = new Uint8Array([137, 80, 78, 71]);
    const { deps, calls } = scripted([
      () => new Response(payload.buffer.slice(0), { status: 200 }),
    ]);
    expect(await fetchResult("http://svc", "j9", deps)).toEqual(payload);
    expect(calls).toEqual(["http://svc/v1/jobs/j9/result"]);
  });

  it("listModels parses the model table", async () => {
    const { deps } = scripted([
      () => json(200, [{ model_id: "default", mask_mode: false,
                         embed_dim: 64 }]),
    ]);
    const models = await listModels("http://svc", deps);
    expect(models[0].model_id).toBe("default");
  });

  it("server progress 0.5 shows as 50%", () => {
    expect(progressPercent(0.5)).toBe(50);
    expect(progressPercent(0)).toBe(0);
    expect(progressPercent(1)).toBe(100);
    expect(progressPercent(1.2)).toBe(100);     // defensive clamp
  });
});

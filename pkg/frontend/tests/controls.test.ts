import { describe, expect, it } from "vitest";

import { RANGES, clampControls, defaultControls, formFields,
         validateControls } from "../src/controls.js";

function seeded(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state ^= state << 13;
    state ^= state >>> 17;
    state ^= state << 5;
    return (state >>> 0) / 0xffffffff;
  };
}

describe("validateControls", () => {
  it("accepts the defaults", () => {
    expect(validateControls(defaultControls())).toEqual([]);
  });

  it("names the offending field", () => {
    const bad = { ...defaultControls(), lambda: 1.4 };
    expect(validateControls(bad)).toEqual([
      { field: "lambda", message: "must lie in [0,1], got 1.4" },
    ]);
    expect(validateControls({ ...defaultControls(), guidance: -1 })[0].field)
      .toBe("guidance");
    expect(validateControls({ ...defaultControls(), steps: 0 })[0].field)
      .toBe("steps");
    expect(validateControls({ ...defaultControls(), steps: 10.5 })[0].field)
      .toBe("steps");
    expect(validateControls({ ...defaultControls(), seed: "abc" })[0].field)
      .toBe("seed");
  });

  it("treats a blank seed as valid (server will pick one)", () => {
    expect(validateControls({ ...defaultControls(), seed: "  " })).toEqual([]);
    expect(validateControls({ ...defaultControls(), seed: "123" })).toEqual([]);
  });
});

describe("clampControls", () => {
  it("never lets a random slider state reach the server out of range", () => {
    const next = seeded(99);
    for (let trial = 0; trial < 500; trial++) {
      const wild = {
        ...defaultControls(),
        lambda: (next() - 0.5) * 20,
        guidance: (next() - 0.5) * 40,
        steps: Math.floor((next() - 0.5) * 5000),
        seed: next() < 0.3 ? "junk#" : String(Math.floor(next() * 1e9)),
      };
      if (next() < 0.1) {
        wild.lambda = Number.NaN;
      }
      const clamped = clampControls(wild);
      expect(validateControls(clamped)).toEqual([]);
      expect(clamped.lambda).toBeGreaterThanOrEqual(RANGES.lambda.min);
      expect(clamped.lambda).toBeLessThanOrEqual(RANGES.lambda.max);
      expect(clamped.guidance).toBeGreaterThanOrEqual(RANGES.guidance.min);
      expect(clamped.steps).toBeGreaterThanOrEqual(RANGES.steps.min);
      expect(clamped.steps).toBeLessThanOrEqual(RANGES.steps.max);
    }
  });

  it("keeps in-range values untouched", () => {
    const c = { ...defaultControls(), lambda: 0.73, guidance: 2.5, steps: 25 };
    expect(clampControls(c)).toEqual(c);
  });
});

describe("formFields", () => {
  it("always carries lambda and omits a blank seed", () => {
    const fields = formFields(defaultControls());
    expect(fields.lambda).toBe("0.5");
    expect(fields.guidance).toBe("1");
    expect(fields.steps).toBe("50");
    expect(fields.model_id).toBe("default");
    expect("seed" in fields).toBe(false);
  });

  it("sends the seed when one is set", () => {
    expect(formFields({ ...defaultControls(), seed: " 7 " }).seed).toBe("7");
  });
});

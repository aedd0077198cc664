/** Control values and client-side validation mirroring the server schema. */

export interface Controls {
  lambda: number;
  guidance: number;
  steps: number;
  /** Empty string means "let the server pick". */
  seed: string;
  seedLock: boolean;
  modelId: string;
}

export interface FieldError {
  field: string;
  message: string;
}

export const RANGES = {
  lambda: { min: 0, max: 1 },
  guidance: { min: 0, max: 5 },
  steps: { min: 1, max: 1000 },
} as const;

export function defaultControls(modelId = "default"): Controls {
  return { lambda: 0.5, guidance: 1.0, steps: 50, seed: "",
           seedLock: false, modelId };
}

/** Force raw slider/input values into the legal ranges. */
export function clampControls(raw: Controls): Controls {
  const clamp = (v: number, r: { min: number; max: number }) =>
    Math.min(r.max, Math.max(r.min, Number.isFinite(v) ? v : r.min));
  return {
    ...raw,
    lambda: clamp(raw.lambda, RANGES.lambda),
    guidance: clamp(raw.guidance, RANGES.guidance),
    steps: Math.round(clamp(raw.steps, RANGES.steps)),
    seed: /^-?\d*$/.test(raw.seed.trim()) ? raw.seed.trim() : "",
  };
}

/** Same checks and ordering the service applies, evaluated locally. */
export function validateControls(c: Controls): FieldError[] {
  const errors: FieldError[] = [];
  if (!Number.isFinite(c.lambda)) {
    errors.push({ field: "lambda", message: "not a number" });
  } else if (c.lambda < 0 || c.lambda > 1) {
    errors.push({ field: "lambda", message: `must lie in [0,1], got ${c.lambda}` });
  }
  if (!Number.isFinite(c.guidance)) {
    errors.push({ field: "guidance", message: "not a number" });
  } else if (c.guidance < 0) {
    errors.push({ field: "guidance", message: `must be >= 0, got ${c.guidance}` });
  }
  if (!Number.isInteger(c.steps)) {
    errors.push({ field: "steps", message: "not an integer" });
  } else if (c.steps < RANGES.steps.min || c.steps > RANGES.steps.max) {
    errors.push({
      field: "steps",
      message: `must lie in [${RANGES.steps.min}, ${RANGES.steps.max}]`,
    });
  }
  if (c.seed.trim() !== "" && !/^-?\d+$/.test(c.seed.trim())) {
    errors.push({ field: "seed", message: `not an integer: ${c.seed}` });
  }
  return errors;
}

/** Multipart form fields for a submission; mask is attached separately. */
export function formFields(c: Controls): Record<string, string> {
  const fields: Record<string, string> = {
    lambda: String(c.lambda),
    guidance: String(c.guidance),
    steps: String(c.steps),
    model_id: c.modelId,
  };
  if (c.seed.trim() !== "") {
    fields.seed = c.seed.trim();
  }
  return fields;
}

/**
 * Typed client for the inference service's /v1 endpoints.
 *
 * Every UI action maps to exactly one of these calls; no generation
 * logic lives in the browser. The fetch implementation is injectable so
 * tests can capture requests and replay canned responses.
 */

export interface GenerateParams {
  prompt: string;
  guidance_w?: number | null;
  seed?: number;
  steps?: number | null;
}

export interface EditParams {
  prompt?: string;
  guidanceW?: number | null;
  seed?: number;
  steps?: number | null;
}

export interface JobAudio {
  kind: "inline" | "url";
  base64?: string;
  url?: string;
  expires_in_seconds?: number;
}

export interface JobSpectrogram {
  base64: string;
  width: number;
  height: number;
}

export interface JobResult {
  id: string;
  audio: JobAudio;
  spectrogram: JobSpectrogram;
  params: Record<string, unknown>;
  timing: { seconds: number; finished_utc?: string };
  latent?: { base64: string; shape: number[] };
}

export interface ServiceInfo {
  config: Record<string, unknown>;
  grid_shape: [number, number];
  latent_shape: [number, number, number];
  checkpoints: Record<string, string>;
  limits: {
    max_steps: number;
    max_prompt_chars: number;
    max_duration_seconds: number;
    sample_rate: number;
  };
}

export interface HealthStatus {
  status: string;
  loaded: boolean;
  checkpoints?: Record<string, string>;
  detail?: string;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

/** Service-reported failure carrying the HTTP status and detail message. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`service error ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

export function base64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
    return btoa(bin);
  }
  return Buffer.from(bytes).toString("base64");
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const doc = (await res.json()) as { detail?: unknown };
    if (typeof doc.detail === "string") return doc.detail;
    if (doc.detail !== undefined) return JSON.stringify(doc.detail);
  } catch {
    /* non-JSON error body */
  }
  return res.statusText || "request failed";
}

export class ServiceClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return res;
  }

  async health(): Promise<HealthStatus> {
    // health is special-cased: a 503 body is a meaningful status, not a throw
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + "/v1/health");
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    return (await res.json()) as HealthStatus;
  }

  async config(): Promise<ServiceInfo> {
    const res = await this.request("/v1/config");
    return (await res.json()) as ServiceInfo;
  }

  async openapi(): Promise<Record<string, unknown>> {
    const res = await this.request("/v1/spec");
    return (await res.json()) as Record<string, unknown>;
  }

  async generate(params: GenerateParams): Promise<JobResult> {
    const body: Record<string, unknown> = { prompt: params.prompt };
    if (params.guidance_w !== undefined && params.guidance_w !== null) {
      body.guidance_w = params.guidance_w;
    }
    if (params.seed !== undefined) body.seed = params.seed;
    if (params.steps !== undefined && params.steps !== null) {
      body.steps = params.steps;
    }
    const res = await this.request("/v1/generate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return (await res.json()) as JobResult;
  }

  private static editForm(audio: Blob, params: EditParams): FormData {
    const form = new FormData();
    form.append("audio", audio, "input.wav");
    form.append("prompt", params.prompt ?? "");
    if (params.guidanceW !== undefined && params.guidanceW !== null) {
      form.append("guidance_w", String(params.guidanceW));
    }
    form.append("seed", String(params.seed ?? 0));
    if (params.steps !== undefined && params.steps !== null) {
      form.append("steps", String(params.steps));
    }
    return form;
  }

  async transform(
    audio: Blob,
    t0: number,
    params: EditParams = {},
  ): Promise<JobResult> {
    const form = ServiceClient.editForm(audio, params);
    form.append("t0", String(t0));
    const res = await this.request("/v1/transform", {
      method: "POST",
      body: form,
    });
    return (await res.json()) as JobResult;
  }

  async inpaint(
    audio: Blob,
    maskPng: Blob,
    params: EditParams = {},
  ): Promise<JobResult> {
    const form = ServiceClient.editForm(audio, params);
    form.append("mask", maskPng, "mask.png");
    const res = await this.request("/v1/inpaint", {
      method: "POST",
      body: form,
    });
    return (await res.json()) as JobResult;
  }

  async extend(
    audio: Blob,
    targetFrames: number,
    params: EditParams = {},
  ): Promise<JobResult> {
    const form = ServiceClient.editForm(audio, params);
    form.append("target_frames", String(targetFrames));
    const res = await this.request("/v1/extend", {
      method: "POST",
      body: form,
    });
    return (await res.json()) as JobResult;
  }

  /** Raw WAV bytes of a job, whether returned inline or by artifact URL. */
  async audioBytes(result: JobResult): Promise<Uint8Array> {
    if (result.audio.kind === "inline" && result.audio.base64 !== undefined) {
      return base64ToBytes(result.audio.base64);
    }
    if (result.audio.kind === "url" && result.audio.url !== undefined) {
      const res = await this.request(result.audio.url);
      return new Uint8Array(await res.arrayBuffer());
    }
    throw new ApiError(0, "job result carries no audio payload");
  }
}

/** Thin client for the inference service. */

import { isPredictResponse, type PredictResponse } from "./types.js";

export interface PredictOptions {
  want_heatmap?: boolean;
  want_confidence?: boolean;
  n_passes?: number;
  seed?: number;
}

/** HTTP error carrying the service's own detail message, surfaced verbatim. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async health(): Promise<boolean> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/health`);
      return response.ok;
    } catch {
      return false;
    }
  }

  async predict(file: File | Blob, options?: PredictOptions): Promise<PredictResponse> {
    const form = new FormData();
    form.append("file", file);
    if (options && Object.keys(options).length > 0) {
      form.append("options", JSON.stringify(options));
    }
    const response = await this.fetchFn(`${this.baseUrl}/predict`, {
      method: "POST",
      body: form,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    const payload: unknown = await response.json();
    if (!isPredictResponse(payload)) {
      throw new ApiError(502, "response does not match the v1 predict schema");
    }
    return payload;
  }
}

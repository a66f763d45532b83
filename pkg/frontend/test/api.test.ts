import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

const fixtureRaw = readFileSync(
  new URL("./fixtures/predict_response.json", import.meta.url), "utf-8");

const file = new Blob([new Uint8Array([137, 80, 78, 71])], { type: "image/png" });

function clientReturning(response: Response): ApiClient {
  return new ApiClient("", async () => response);
}

describe("predict", () => {
  it("parses a schema-valid response", async () => {
    const client = clientReturning(new Response(fixtureRaw, { status: 200 }));
    const body = await client.predict(file);
    expect(body.frames).toHaveLength(3);
    expect(body.api_version).toBe("1");
  });

  it("surfaces 400 details verbatim", async () => {
    const client = clientReturning(new Response(
      JSON.stringify({ detail: "undecodable media" }), { status: 400 }));
    const error = await client.predict(file).catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(400);
    expect((error as ApiError).detail).toBe("undecodable media");
  });

  it("surfaces 413 for oversized payloads", async () => {
    const client = clientReturning(new Response(
      JSON.stringify({ detail: "payload exceeds upload limit" }), { status: 413 }));
    const error = await client.predict(file).catch((e: unknown) => e);
    expect((error as ApiError).status).toBe(413);
    expect((error as ApiError).detail).toBe("payload exceeds upload limit");
  });

  it("rejects responses from a different schema version", async () => {
    const alien = JSON.stringify({ api_version: "2", frames: [], video: {} });
    const client = clientReturning(new Response(alien, { status: 200 }));
    const error = await client.predict(file).catch((e: unknown) => e);
    expect((error as ApiError).status).toBe(502);
  });

  it("propagates network failures as-is for the retry affordance", async () => {
    const client = new ApiClient("", async () => {
      throw new TypeError("fetch failed");
    });
    await expect(client.predict(file)).rejects.toThrow("fetch failed");
  });

  it("sends multipart form data with the options field", async () => {
    let captured: FormData | null = null;
    const client = new ApiClient("", async (_url, init) => {
      captured = init?.body as FormData;
      return new Response(fixtureRaw, { status: 200 });
    });
    await client.predict(file, { want_heatmap: true, n_passes: 5 });
    expect(captured).not.toBeNull();
    expect(captured!.get("file")).toBeInstanceOf(Blob);
    expect(JSON.parse(captured!.get("options") as string)).toEqual(
      { want_heatmap: true, n_passes: 5 });
  });
});

describe("health", () => {
  it("reports reachable services", async () => {
    const client = clientReturning(new Response("{\"status\":\"ok\"}", { status: 200 }));
    expect(await client.health()).toBe(true);
  });

  it("reports unreachable services as false instead of throwing", async () => {
    const client = new ApiClient("", async () => {
      throw new TypeError("fetch failed");
    });
    expect(await client.health()).toBe(false);
  });
});

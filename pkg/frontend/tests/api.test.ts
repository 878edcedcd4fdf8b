import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface Call {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

function stubClient(
  responder: (call: Call) => { status?: number; body?: unknown; headers?: Record<string, string> },
) {
  const calls: Call[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const call: Call = {
      url: String(input),
      method: init?.method ?? "GET",
      headers: (init?.headers as Record<string, string>) ?? {},
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    };
    calls.push(call);
    const out = responder(call);
    return new Response(JSON.stringify(out.body ?? {}), {
      status: out.status ?? 200,
      headers: { "Content-Type": "application/json", ...(out.headers ?? {}) },
    });
  }) as typeof fetch;
  return { calls, client: new ApiClient("http://svc", fetchFn) };
}

describe("ApiClient", () => {
  it("creates sessions with the chosen backend", async () => {
    const { calls, client } = stubClient(() => ({
      body: { session_id: "s1", etag: "e0", kb_version: "v0" },
    }));
    const info = await client.createSession("img-0", "files");
    expect(info.session_id).toBe("s1");
    expect(calls[0].url).toBe("http://svc/sessions");
    expect(calls[0].method).toBe("POST");
    expect(calls[0].body).toEqual({ image_id: "img-0", backend: "files" });
    expect(calls[0].headers["Content-Type"]).toBe("application/json");
  });

  it("reads the tree etag from the response header", async () => {
    const { client } = stubClient(() => ({
      body: { image_id: "img-0", width: 2, height: 2, kb_version: "v0", nodes: [] },
      headers: { ETag: "abc123" },
    }));
    const { tree, etag } = await client.getTree("s1");
    expect(etag).toBe("abc123");
    expect(tree.image_id).toBe("img-0");
  });

  it("sends the idempotency key on requests", async () => {
    const { calls, client } = stubClient(() => ({
      body: { applied: [], lost: true, etag: "e1" },
    }));
    const out = await client.postRequest(
      "s1",
      { kind: "II", node: 1, probe: [3, 4] },
      "key-1",
    );
    expect(out.lost).toBe(true);
    expect(calls[0].url).toBe("http://svc/sessions/s1/requests");
    expect(calls[0].headers["Idempotency-Key"]).toBe("key-1");
    expect(calls[0].body).toEqual({ kind: "II", node: 1, probe: [3, 4] });
  });

  it("raises ApiError with the service error code", async () => {
    const { client } = stubClient(() => ({
      status: 409,
      body: {
        code: "alternation_violation",
        message: "wrong turn",
        detail: { node: 2 },
      },
    }));
    const err = await client
      .postRequest("s1", { kind: "I", node: 2 })
      .then(() => null)
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    const apiErr = err as ApiError;
    expect(apiErr.status).toBe(409);
    expect(apiErr.code).toBe("alternation_violation");
    expect(apiErr.detail).toEqual({ node: 2 });
  });

  it("routes undo, export, kb, and image urls", async () => {
    const { calls, client } = stubClient(() => ({
      body: { undone: true, etag: "e", tree: {}, log: [], paths: {} },
    }));
    await client.undo("s1");
    await client.exportSession("s1");
    await client.getKb("v0");
    expect(calls.map((c) => c.url)).toEqual([
      "http://svc/sessions/s1/undo",
      "http://svc/sessions/s1/export",
      "http://svc/kb/v0",
    ]);
    expect(client.imageUrl("img-7")).toBe("http://svc/images/img-7");
  });
});

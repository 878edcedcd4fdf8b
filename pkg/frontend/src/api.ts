/**
 * Typed client for the annotation session API. Every method returns the
 * parsed response body; non-2xx responses raise ApiError carrying the
 * service's stable error code.
 */

import { KbJson, TreeJson, TreeNodeJson } from "./model.js";

export interface SessionInfo {
  session_id: string;
  etag: string;
  kb_version: string;
}

export interface TreeResponse {
  tree: TreeJson;
  etag: string;
}

export interface RequestResponse {
  applied: TreeNodeJson[];
  lost: boolean;
  etag: string;
}

export interface UndoResponse {
  undone: boolean;
  etag: string;
  tree: TreeJson;
}

export interface ExportResponse {
  etag: string;
  tree: TreeJson;
  log: unknown[];
  paths: { tree: string; requests: string };
}

export type RequestBody =
  | { kind: "I"; node: number; active_classes?: number[] }
  | { kind: "II"; node: number; probe: [number, number] };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail: Record<string, unknown> = {},
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchFn = (...args) => fetch(...args),
  ) {}

  private async call<T>(
    method: string,
    path: string,
    body?: unknown,
    headers: Record<string, string> = {},
  ): Promise<T> {
    const init: RequestInit = { method, headers: { ...headers } };
    if (body !== undefined) {
      (init.headers as Record<string, string>)["Content-Type"] =
        "application/json";
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let payload: { code?: string; message?: string; detail?: object } = {};
      try {
        payload = await response.json();
      } catch {
        /* non-json error body */
      }
      throw new ApiError(
        response.status,
        payload.code ?? "http_error",
        payload.message ?? `${method} ${path} failed (${response.status})`,
        (payload.detail as Record<string, unknown>) ?? {},
      );
    }
    return (await response.json()) as T;
  }

  createSession(imageId: string, backend = "oracle"): Promise<SessionInfo> {
    return this.call("POST", "/sessions", {
      image_id: imageId,
      backend,
    });
  }

  async getTree(sessionId: string): Promise<TreeResponse> {
    // session state mutates between polls; never serve it from a cache
    const response = await this.fetchFn(
      `${this.baseUrl}/sessions/${sessionId}/tree`,
      { cache: "no-store" },
    );
    if (!response.ok) {
      const payload = await response.json();
      throw new ApiError(response.status, payload.code, payload.message);
    }
    return {
      tree: (await response.json()) as TreeJson,
      etag: response.headers.get("ETag") ?? "",
    };
  }

  postRequest(
    sessionId: string,
    body: RequestBody,
    idempotencyKey?: string,
  ): Promise<RequestResponse> {
    const headers: Record<string, string> = {};
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    return this.call("POST", `/sessions/${sessionId}/requests`, body, headers);
  }

  undo(sessionId: string): Promise<UndoResponse> {
    return this.call("POST", `/sessions/${sessionId}/undo`, {});
  }

  exportSession(sessionId: string): Promise<ExportResponse> {
    return this.call("POST", `/sessions/${sessionId}/export`, {});
  }

  getKb(version: string): Promise<KbJson> {
    return this.call("GET", `/kb/${version}`);
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${imageId}`;
  }
}

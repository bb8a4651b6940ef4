/** Thin typed client for the inbetween service; JSON in, JSON out. */

import type {
  ChainRequest,
  ChainResponse,
  GenerateRequest,
  GenerateResponse,
  HealthResponse,
  SkeletonInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...a) => fetch(...a),
  ) {}

  private async request<T>(
    path: string,
    method: "GET" | "POST",
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail =
        typeof payload === "object" && payload !== null && "detail" in payload
          ? String((payload as { detail: unknown }).detail)
          : resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("/health", "GET");
  }

  skeleton(): Promise<SkeletonInfo> {
    return this.request("/skeleton", "GET");
  }

  generate(req: GenerateRequest): Promise<GenerateResponse> {
    return this.request("/generate", "POST", req);
  }

  chain(req: ChainRequest): Promise<ChainResponse> {
    return this.request("/session/chain", "POST", req);
  }
}

import type {
  InterpolateRequest,
  InterpolateResponse,
  ModelInfo,
  RetextureRequest,
  RetextureResponse,
  StampRequest,
  StampResponse,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Thin typed client over the inference REST API. */
export class StampClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      const detail = await res.text();
      throw new ServiceError(res.status, `${path} failed (${res.status}): ${detail}`);
    }
    return res.json() as Promise<T>;
  }

  async models(): Promise<ModelInfo[]> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/models`);
    if (!res.ok) throw new ServiceError(res.status, "model manifest unavailable");
    const body = (await res.json()) as { models: ModelInfo[] };
    return body.models;
  }

  stamp(req: StampRequest): Promise<StampResponse> {
    return this.post("/v1/stamp", req);
  }

  retexture(req: RetextureRequest): Promise<RetextureResponse> {
    return this.post("/v1/retexture", req);
  }

  interpolate(req: InterpolateRequest): Promise<InterpolateResponse> {
    return this.post("/v1/interpolate", req);
  }
}

/** sha-256 of the decoded PNG bytes, hex. Matches the server's content hash. */
export async function hashB64Png(b64: string): Promise<string> {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

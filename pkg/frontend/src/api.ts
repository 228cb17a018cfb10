import type { GraphPayload, SessionSnapshot, VisualizationPayload, WorldLineEstimate } from "./types.ts";

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function parseError(response: Response): Promise<ApiError> {
  try {
    const body = await response.json();
    return new ApiError(response.status, body.code ?? "unknown", body.message ?? response.statusText);
  } catch {
    return new ApiError(response.status, "unknown", response.statusText);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createSession(initial: string, config?: Record<string, unknown>): Promise<SessionSnapshot> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(config ? { initial, config } : { initial }),
    });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${sessionId}`);
  }

  expand(sessionId: string): Promise<{ candidates: unknown[] }> {
    return this.request(`/sessions/${sessionId}/expand`, { method: "POST" });
  }

  select(sessionId: string, nodeId: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${sessionId}/select`, {
      method: "POST",
      body: JSON.stringify({ node_id: nodeId }),
    });
  }

  finalize(sessionId: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${sessionId}/finalize`, { method: "POST" });
  }

  visualization(sessionId: string): Promise<VisualizationPayload> {
    return this.request(`/sessions/${sessionId}/visualization`);
  }

  graph(sessionId: string): Promise<GraphPayload> {
    return this.request(`/sessions/${sessionId}/graph`);
  }

  estimates(sessionId: string): Promise<{ estimates: WorldLineEstimate[] }> {
    return this.request(`/sessions/${sessionId}/estimates`);
  }
}

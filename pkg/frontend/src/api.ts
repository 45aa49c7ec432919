// Typed client for the sentinel service. The console never talks to
// anything else, and never calls an LLM itself.

export interface TurnDoc {
  kind: "answer" | "clarification" | "confirmation" | "result";
  text: string;
  missing_slots?: string[];
  plan?: unknown[];
  payload?: Record<string, unknown>;
  retryable?: boolean;
}

export interface AuditEntryDoc {
  seq: number;
  session_seq: number;
  timestamp: string;
  session_id: string;
  kind: string;
  payload: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = `HTTP${resp.status}`;
  let message = resp.statusText;
  try {
    const body = (await resp.json()) as { error?: { code?: string; message?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, code, message);
}

export class SentinelClient {
  constructor(
    private baseUrl: string,
    private token?: string, // held in memory only
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(json = true): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  async health(): Promise<{ status: string; version: string }> {
    return this.request("GET", "/healthz");
  }

  async createSession(): Promise<string> {
    const body = await this.request<{ session_id: string }>("POST", "/api/sessions");
    return body.session_id;
  }

  async postMessage(sessionId: string, text: string): Promise<TurnDoc> {
    const body = await this.request<{ turn: TurnDoc }>(
      "POST",
      `/api/sessions/${sessionId}/messages`,
      { text },
    );
    return body.turn;
  }

  async confirm(sessionId: string, decision: "affirm" | "deny"): Promise<TurnDoc> {
    const body = await this.request<{ turn: TurnDoc }>(
      "POST",
      `/api/sessions/${sessionId}/confirm`,
      { decision },
    );
    return body.turn;
  }

  async syncFeeds(source = "all"): Promise<unknown> {
    return this.request("POST", `/api/feeds/${source}/sync`);
  }

  async auditEntries(sessionId: string): Promise<AuditEntryDoc[]> {
    const body = await this.request<{ entries: AuditEntryDoc[] }>(
      "GET",
      `/api/audit?session=${encodeURIComponent(sessionId)}`,
    );
    return body.entries;
  }

  // Browser-only; returns null where WebSocket is unavailable (tests under node).
  openStream(sessionId: string, onEvent: (event: Record<string, unknown>) => void): WebSocket | null {
    if (typeof WebSocket === "undefined") return null;
    const wsBase = this.baseUrl.replace(/^http/, "ws");
    const tokenQuery = this.token ? `?token=${encodeURIComponent(this.token)}` : "";
    const socket = new WebSocket(`${wsBase}/api/sessions/${sessionId}/stream${tokenQuery}`);
    socket.onmessage = (msg) => {
      try {
        onEvent(JSON.parse(msg.data as string));
      } catch {
        // malformed frame; ignore
      }
    };
    return socket;
  }
}

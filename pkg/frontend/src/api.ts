// Typed client for the /v1 API. All server interaction goes through here;
// the UI performs no retrieval logic of its own.

import type { DocumentInfo, Turn } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function throwApiError(resp: Response): Promise<never> {
  let status = resp.status;
  let code = "internal";
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body && typeof body.message === "string") {
      status = body.status ?? resp.status;
      code = body.code ?? code;
      message = body.message;
    }
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(status, code, message);
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface ApiClient {
  imageUrl(docId: string, pageNo: number): string;
  createSession(): Promise<string>;
  listDocuments(): Promise<DocumentInfo[]>;
  uploadManifest(manifest: string): Promise<{ doc_id: string; pages: number }>;
  sendMessage(sessionId: string, text: string): Promise<Turn>;
  sendMessageStreaming(
    sessionId: string,
    text: string,
    onToken: (chunk: string) => void,
  ): Promise<Turn>;
}

export class FolioClient implements ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  imageUrl(docId: string, pageNo: number): string {
    return `${this.baseUrl}/v1/pages/${encodeURIComponent(docId)}/${pageNo}/image`;
  }

  async createSession(): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/sessions`, { method: "POST" });
    if (!resp.ok) await throwApiError(resp);
    const body = await resp.json();
    return body.session_id as string;
  }

  async listDocuments(): Promise<DocumentInfo[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/documents`);
    if (!resp.ok) await throwApiError(resp);
    return (await resp.json()) as DocumentInfo[];
  }

  async uploadManifest(manifest: string): Promise<{ doc_id: string; pages: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/documents`, {
      method: "POST",
      headers: { "Content-Type": "application/x-ndjson" },
      body: manifest,
    });
    if (!resp.ok) await throwApiError(resp);
    return (await resp.json()) as { doc_id: string; pages: number };
  }

  async sendMessage(sessionId: string, text: string): Promise<Turn> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}/messages`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      },
    );
    if (!resp.ok) await throwApiError(resp);
    return (await resp.json()) as Turn;
  }

  // Streaming variant: `token` events carry answer chunks, one final `done`
  // event carries the full Turn. onToken receives each chunk as it arrives.
  async sendMessageStreaming(
    sessionId: string,
    text: string,
    onToken: (chunk: string) => void,
  ): Promise<Turn> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}/messages?stream=1`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      },
    );
    if (!resp.ok) await throwApiError(resp);
    if (!resp.body) {
      throw new ApiError(502, "provider_unreachable", "response has no body to stream");
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    let doneTurn: Turn | null = null;
    for (;;) {
      const { value, done } = await reader.read();
      if (value) buffer += decoder.decode(value, { stream: true });
      let sep = buffer.indexOf("\n\n");
      while (sep >= 0) {
        const block = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        const event = parseSseBlock(block);
        if (event) {
          if (event.name === "token") onToken(event.data.text as string);
          if (event.name === "done") doneTurn = event.data as unknown as Turn;
        }
        sep = buffer.indexOf("\n\n");
      }
      if (done) break;
    }
    if (!doneTurn) {
      throw new ApiError(502, "provider_unreachable", "stream ended without a done event");
    }
    return doneTurn;
  }
}

function parseSseBlock(block: string): { name: string; data: Record<string, unknown> } | null {
  let name = "";
  let data = "";
  for (const line of block.split("\n")) {
    if (line.startsWith("event: ")) name = line.slice("event: ".length);
    else if (line.startsWith("data: ")) data = line.slice("data: ".length);
  }
  if (!name || !data) return null;
  return { name, data: JSON.parse(data) as Record<string, unknown> };
}

// Controller tying the API client, view state, and DOM together. One
// in-flight message per session; the send control is disabled exactly while
// a request is pending.

import { ApiClient, ApiError } from "./api.js";
import { cardsForTurn } from "./cards.js";
import {
  SessionView,
  completeSend,
  failSend,
  loadStoredSessionIds,
  newSessionView,
  startSend,
  storeSessionIds,
  takeFailedText,
} from "./state.js";
import {
  renderErrorBanner,
  renderEvidencePanel,
  renderEvidenceViewer,
  renderSidebarDocuments,
  renderTurnBubble,
} from "./render.js";
import type { EvidenceCard, Turn } from "./types.js";

export const APP_TEMPLATE = `
<div class="app-shell">
  <aside class="sidebar" id="sidebar">
    <h2>Documents</h2>
    <div id="doc-list"></div>
    <label class="upload-label">
      Upload bundle manifest
      <input type="file" id="upload-input" accept=".jsonl,.ndjson,.txt" />
    </label>
    <div id="upload-status"></div>
  </aside>
  <main class="chat-panel">
    <div id="error-area"></div>
    <div id="chat-log" class="chat-log"></div>
    <form id="send-form" class="send-form">
      <input type="text" id="message-input" placeholder="Ask about your documents" autocomplete="off" />
      <button type="submit" id="send-button">Send</button>
    </form>
  </main>
  <aside class="evidence-panel">
    <h2>Evidence</h2>
    <div id="evidence-panel"></div>
  </aside>
  <div id="viewer-root"></div>
</div>
`;

export interface AppOptions {
  streaming?: boolean;
  storage?: Storage;
}

export class AppController {
  readonly client: ApiClient;
  view: SessionView | null = null;
  private readonly root: ParentNode;
  private readonly streaming: boolean;
  private readonly storage: Storage;

  constructor(root: ParentNode, client: ApiClient, options: AppOptions = {}) {
    this.root = root;
    this.client = client;
    this.streaming = options.streaming ?? false;
    this.storage = options.storage ?? window.localStorage;
    this.bind();
  }

  private el<T extends HTMLElement>(id: string): T {
    const found = this.root.querySelector(`#${id}`);
    if (!found) throw new Error(`missing element #${id}`);
    return found as T;
  }

  private bind(): void {
    this.el<HTMLFormElement>("send-form").addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendCurrentInput();
    });
    this.el<HTMLInputElement>("upload-input").addEventListener("change", (event) => {
      const input = event.target as HTMLInputElement;
      const file = input.files?.[0];
      if (file) void this.uploadFile(file);
      input.value = "";
    });
  }

  async init(): Promise<void> {
    const stored = loadStoredSessionIds(this.storage);
    let sessionId = stored[0];
    if (!sessionId) {
      sessionId = await this.client.createSession();
      storeSessionIds(this.storage, [sessionId, ...stored]);
    }
    this.view = newSessionView(sessionId);
    await this.refreshDocuments();
    this.renderChat();
  }

  async refreshDocuments(): Promise<void> {
    const docs = await this.client.listDocuments();
    const container = this.el("doc-list");
    container.replaceChildren(renderSidebarDocuments(docs));
  }

  async sendCurrentInput(): Promise<void> {
    const input = this.el<HTMLInputElement>("message-input");
    const text = input.value.trim();
    if (!text) return;
    input.value = "";
    await this.send(text);
  }

  async send(text: string): Promise<void> {
    if (!this.view || this.view.pending) return;
    this.clearError();
    this.view = startSend(this.view, text);
    this.renderChat();
    try {
      let turn: Turn;
      if (this.streaming) {
        const live = this.liveAssistantBubble();
        turn = await this.client.sendMessageStreaming(this.view.sessionId, text, (chunk) => {
          live.textContent = (live.textContent ?? "") + chunk;
        });
      } else {
        turn = await this.client.sendMessage(this.view.sessionId, text);
      }
      this.view = completeSend(this.view, turn);
      this.renderChat();
      this.renderEvidence(turn);
    } catch (error) {
      this.view = failSend(this.view);
      this.renderChat();
      this.showError(error instanceof ApiError ? error.message : `network failure: ${error}`);
    }
  }

  retryFailed(): void {
    if (!this.view) return;
    const taken = takeFailedText(this.view);
    if (!taken) return;
    this.view = taken.view;
    void this.send(taken.text);
  }

  async uploadFile(file: Blob): Promise<void> {
    this.clearError();
    const status = this.el("upload-status");
    try {
      const manifest = await file.text();
      const result = await this.client.uploadManifest(manifest);
      status.textContent = `ingested ${result.doc_id} (${result.pages} pages)`;
      await this.refreshDocuments();
    } catch (error) {
      // Validation/conflict messages come from the server verbatim.
      const message = error instanceof ApiError ? error.message : `upload failed: ${error}`;
      status.textContent = "";
      this.showError(message);
    }
  }

  inspect(card: EvidenceCard): void {
    const rootEl = this.el("viewer-root");
    rootEl.replaceChildren(renderEvidenceViewer(card, () => rootEl.replaceChildren()));
  }

  private liveAssistantBubble(): HTMLElement {
    const log = this.el("chat-log");
    const live = document.createElement("div");
    live.className = "bubble bubble-assistant status-streaming";
    live.id = "live-bubble";
    log.appendChild(live);
    return live;
  }

  renderChat(): void {
    if (!this.view) return;
    const log = this.el("chat-log");
    log.replaceChildren();
    for (const item of this.view.items) {
      const isAssistant = item.turn.role === "assistant";
      const cards = isAssistant ? cardsForTurn(item.turn, (d, p) => this.client.imageUrl(d, p)) : [];
      log.appendChild(
        renderTurnBubble(
          item,
          (index) => {
            if (cards[index]) this.inspect(cards[index]);
          },
          item.status === "failed" ? () => this.retryFailed() : undefined,
        ),
      );
    }
    const send = this.el<HTMLButtonElement>("send-button");
    send.disabled = this.view.pending;
  }

  renderEvidence(turn: Turn): void {
    const cards = cardsForTurn(turn, (d, p) => this.client.imageUrl(d, p));
    const panel = this.el("evidence-panel");
    panel.replaceChildren(renderEvidencePanel(cards, (card) => this.inspect(card)));
  }

  private showError(message: string): void {
    this.el("error-area").replaceChildren(renderErrorBanner(message));
  }

  private clearError(): void {
    this.el("error-area").replaceChildren();
  }
}

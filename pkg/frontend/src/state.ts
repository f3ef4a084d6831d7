// Chat view state as pure transitions. The server owns the turn history;
// the UI keeps rendered mirrors plus optimistic/failed decorations, and
// enforces at most one in-flight request per session.

import type { LocalTurn, Turn } from "./types.js";

export interface SessionView {
  sessionId: string;
  items: LocalTurn[];
  pending: boolean;
}

export function newSessionView(sessionId: string): SessionView {
  return { sessionId, items: [], pending: false };
}

export function startSend(view: SessionView, text: string): SessionView {
  if (view.pending) {
    throw new Error("a message is already in flight for this session");
  }
  const optimistic: LocalTurn = {
    turn: { role: "user", text, citations: [], timestamp: "" },
    status: "pending",
  };
  return { ...view, items: [...view.items, optimistic], pending: true };
}

export function completeSend(view: SessionView, assistant: Turn): SessionView {
  const items = view.items.map((item): LocalTurn =>
    item.status === "pending" ? { ...item, status: "confirmed" } : item,
  );
  items.push({ turn: assistant, status: "confirmed" });
  return { ...view, items, pending: false };
}

export function failSend(view: SessionView): SessionView {
  const items = view.items.map((item): LocalTurn =>
    item.status === "pending" ? { ...item, status: "failed" } : item,
  );
  return { ...view, items, pending: false };
}

// Retry drops the failed bubble and replays its text through startSend.
export function takeFailedText(view: SessionView): { view: SessionView; text: string } | null {
  const idx = view.items.findIndex((item) => item.status === "failed");
  if (idx < 0) return null;
  const text = view.items[idx].turn.text;
  const items = view.items.slice(0, idx).concat(view.items.slice(idx + 1));
  return { view: { ...view, items }, text };
}

const STORAGE_KEY = "folio.sessions";

export function loadStoredSessionIds(storage: Pick<Storage, "getItem">): string[] {
  try {
    const raw = storage.getItem(STORAGE_KEY);
    const parsed = raw ? JSON.parse(raw) : [];
    return Array.isArray(parsed) ? parsed.filter((x) => typeof x === "string") : [];
  } catch {
    return [];
  }
}

export function storeSessionIds(storage: Pick<Storage, "setItem">, ids: string[]): void {
  storage.setItem(STORAGE_KEY, JSON.stringify(ids));
}

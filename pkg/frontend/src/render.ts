// DOM construction for chat bubbles, evidence cards, sidebar, and the
// evidence viewer. Pure functions from data to elements; event wiring is
// passed in as callbacks.

import type { DocumentInfo, EvidenceCard, LocalTurn } from "./types.js";

export function renderTurnBubble(
  item: LocalTurn,
  onCitationClick: (index: number) => void,
  onRetry?: () => void,
): HTMLElement {
  const bubble = document.createElement("div");
  bubble.className = `bubble bubble-${item.turn.role} status-${item.status}`;
  const text = document.createElement("div");
  text.className = "bubble-text";
  text.textContent = item.turn.text;
  bubble.appendChild(text);

  if (item.turn.citations.length > 0) {
    const chips = document.createElement("div");
    chips.className = "citation-chips";
    item.turn.citations.forEach((citation, index) => {
      const chip = document.createElement("button");
      chip.type = "button";
      chip.className = "citation-chip";
      chip.textContent = citation.label
        ? `${citation.doc_id}:${citation.page_no} ${citation.label}`
        : `${citation.doc_id}:${citation.page_no}`;
      chip.addEventListener("click", () => onCitationClick(index));
      chips.appendChild(chip);
    });
    bubble.appendChild(chips);
  }

  if (item.status === "failed") {
    const failed = document.createElement("div");
    failed.className = "send-failed";
    failed.textContent = "not delivered";
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry-button";
    retry.textContent = "retry";
    if (onRetry) retry.addEventListener("click", onRetry);
    failed.appendChild(retry);
    bubble.appendChild(failed);
  }
  return bubble;
}

export function renderEvidenceCard(card: EvidenceCard, onInspect: (card: EvidenceCard) => void): HTMLElement {
  const el = document.createElement("div");
  el.className = "evidence-card";
  const thumb = document.createElement("img");
  thumb.className = "evidence-thumbnail";
  thumb.src = card.thumbnailUrl;
  thumb.alt = `${card.docId} page ${card.pageNo}`;
  el.appendChild(thumb);

  const meta = document.createElement("div");
  meta.className = "evidence-meta";
  const title = document.createElement("div");
  title.className = "evidence-title";
  title.textContent = card.label
    ? `${card.docId} p.${card.pageNo} — ${card.label}`
    : `${card.docId} p.${card.pageNo}`;
  meta.appendChild(title);
  const snippet = document.createElement("div");
  snippet.className = "evidence-snippet";
  snippet.textContent = card.snippet;
  meta.appendChild(snippet);
  const score = document.createElement("div");
  score.className = "evidence-score";
  score.textContent = card.score.toFixed(3);
  meta.appendChild(score);
  el.appendChild(meta);

  el.addEventListener("click", () => onInspect(card));
  return el;
}

export function renderEvidencePanel(
  cards: EvidenceCard[],
  onInspect: (card: EvidenceCard) => void,
): HTMLElement {
  const panel = document.createElement("div");
  panel.className = "evidence-cards";
  for (const card of cards) {
    panel.appendChild(renderEvidenceCard(card, onInspect));
  }
  return panel;
}

export function renderSidebarDocuments(docs: DocumentInfo[]): HTMLElement {
  const list = document.createElement("ul");
  list.className = "document-list";
  for (const doc of docs) {
    const item = document.createElement("li");
    item.className = "document-entry";
    item.dataset.docId = doc.doc_id;
    item.textContent = `${doc.title} (${doc.doc_id}, ${doc.pages} pages)`;
    list.appendChild(item);
  }
  return list;
}

export function renderEvidenceViewer(card: EvidenceCard, onClose: () => void): HTMLElement {
  const overlay = document.createElement("div");
  overlay.className = "evidence-viewer";

  const frame = document.createElement("div");
  frame.className = "viewer-frame";

  const image = document.createElement("img");
  image.className = "viewer-image";
  image.src = card.thumbnailUrl;
  image.alt = `${card.docId} page ${card.pageNo}`;
  image.addEventListener("error", () => {
    const placeholder = document.createElement("div");
    placeholder.className = "viewer-placeholder";
    placeholder.textContent = "image unavailable";
    image.replaceWith(placeholder);
  });
  frame.appendChild(image);

  if (card.label) {
    const label = document.createElement("div");
    label.className = "viewer-label";
    label.textContent = card.label;
    frame.appendChild(label);
  }
  const caption = document.createElement("div");
  caption.className = "viewer-caption";
  caption.textContent = card.snippet;
  frame.appendChild(caption);

  const close = document.createElement("button");
  close.type = "button";
  close.className = "viewer-close";
  close.textContent = "close";
  close.addEventListener("click", onClose);
  frame.appendChild(close);

  overlay.appendChild(frame);
  return overlay;
}

export function renderErrorBanner(message: string): HTMLElement {
  const banner = document.createElement("div");
  banner.className = "error-banner";
  banner.textContent = message;
  return banner;
}

// Evidence cards are derived 1:1 from a turn's citations; the UI never
// invents evidence the server did not cite.

import type { Citation, EvidenceCard, Turn } from "./types.js";

export function citationToCard(
  citation: Citation,
  imageUrl: (docId: string, pageNo: number) => string,
): EvidenceCard {
  return {
    docId: citation.doc_id,
    pageNo: citation.page_no,
    thumbnailUrl: imageUrl(citation.doc_id, citation.page_no),
    snippet: citation.snippet ?? "",
    score: citation.score,
    kind: citation.kind,
    label: citation.label,
  };
}

export function cardsForTurn(
  turn: Turn,
  imageUrl: (docId: string, pageNo: number) => string,
): EvidenceCard[] {
  const cards = turn.citations.map((c) => citationToCard(c, imageUrl));
  cards.sort((a, b) => b.score - a.score);
  return cards;
}

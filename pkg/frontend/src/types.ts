// Mirrors of the server's /v1 JSON shapes. Rendered turns must match the
// server payload exactly; everything extra the UI needs lives in local types.

export interface Citation {
  doc_id: string;
  page_no: number;
  kind: string;
  score: number;
  label?: string;
  snippet?: string;
}

export interface Turn {
  role: "user" | "assistant";
  text: string;
  citations: Citation[];
  timestamp: string;
}

export interface DocumentInfo {
  doc_id: string;
  title: string;
  pages: number;
}

export interface ApiErrorBody {
  status: number;
  code: string;
  message: string;
}

export interface EvidenceCard {
  docId: string;
  pageNo: number;
  thumbnailUrl: string;
  snippet: string;
  score: number;
  kind: string;
  label?: string;
}

// Local chat item: server turns plus optimistic/failed send state.
export type TurnStatus = "confirmed" | "pending" | "failed";

export interface LocalTurn {
  turn: Turn;
  status: TurnStatus;
}

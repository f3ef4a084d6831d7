"""Retrieval orchestration and chat: embed the query, gather text and image
evidence, assemble a cited prompt within a token budget, and obtain an answer
from a generation backend.

The deterministic stub backend makes the whole pipeline a pure function of
(corpus, query, seeds): its answer is "ANSWER_FROM:" + the top surviving
evidence block's tag + a space + the first 10 whitespace tokens of that
block's text (or "ANSWER_FROM:NONE" with no evidence).
"""

from __future__ import annotations

import enum
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

import httpx
import numpy as np

from . import align, corpus, embed
from .errors import (
    BudgetTooSmall,
    DimMismatch,
    DuplicateDocId,
    ProviderBadResponse,
    ProviderUnreachable,
    SessionNotFound,
    TurnOrderViolation,
)
from .index import Payload, RecordKind, SearchFilter, SearchHit, Space, VectorIndex

PROMPT_PREAMBLE = (
    "You are a document assistant. Answer the user's question using only the "
    "evidence blocks below; cite evidence by its [doc:page] tag."
)

DEFAULT_K_TEXT = 5
DEFAULT_K_IMAGE = 2
DEFAULT_HISTORY_TURNS = 6
DEFAULT_BUDGET_UNITS = 3000

IMAGE_KINDS = frozenset({RecordKind.PAGE_IMAGE, RecordKind.FIGURE_IMAGE})


class Role(str, enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"


class BackendKind(str, enum.Enum):
    REMOTE_HTTP = "remote_http"
    STUB = "stub"


@dataclass
class Citation:
    doc_id: str
    page_no: int
    kind: RecordKind
    label: str | None = None
    snippet: str | None = None  # chunk text or clean caption backing the citation
    score: float = 0.0

    def to_dict(self) -> dict:
        out = {
            "doc_id": self.doc_id,
            "page_no": self.page_no,
            "kind": self.kind.name.lower(),
            "score": self.score,
        }
        if self.label is not None:
            out["label"] = self.label
        if self.snippet is not None:
            out["snippet"] = self.snippet
        return out


@dataclass
class Turn:
    role: Role
    text: str
    citations: list[Citation] = field(default_factory=list)
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "text": self.text,
            "citations": [c.to_dict() for c in self.citations],
            "timestamp": self.timestamp,
        }


@dataclass
class ChatSession:
    session_id: str
    turns: list[Turn] = field(default_factory=list)

    def append_turn(self, turn: Turn) -> None:
        """Roles must strictly alternate starting with User; citations are
        only carried by Assistant turns."""
        expected = Role.USER if len(self.turns) % 2 == 0 else Role.ASSISTANT
        if turn.role != expected:
            raise TurnOrderViolation(f"expected {expected.value} turn at position {len(self.turns)}")
        if turn.role == Role.USER and turn.citations:
            raise TurnOrderViolation("user turns cannot carry citations")
        self.turns.append(turn)


@dataclass
class GenerationBackendConfig:
    kind: BackendKind
    endpoint: str | None = None
    timeout_ms: int = 10000
    max_output_units: int = 256

    def __post_init__(self):
        if self.kind == BackendKind.REMOTE_HTTP and not self.endpoint:
            raise ValueError("RemoteHttp backend requires an endpoint")


@dataclass
class RetrievalResult:
    text_hits: list[SearchHit]
    image_hits: list[SearchHit]
    query_vector: np.ndarray


@dataclass
class EvidenceBlock:
    tag: str
    text: str
    score: float
    hit_id: int
    kind: RecordKind
    doc_id: str
    page_no: int
    label: str | None = None
    image_ref: str | None = None

    def units(self) -> int:
        return 1 + len(self.text.split())  # tag + caption/chunk tokens


@dataclass
class Prompt:
    text: str
    evidence: list[EvidenceBlock]
    image_refs: list[str]
    evidence_dropped: bool


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _block_key(hit: SearchHit) -> tuple:
    if hit.kind == RecordKind.TEXT_CHUNK:
        return ("chunk", hit.payload.chunk_id)
    return ("image", hit.payload.doc_id, hit.payload.page_no, hit.payload.label, int(hit.kind))


def _block_from_hit(hit: SearchHit) -> EvidenceBlock:
    p = hit.payload
    tag = f"[{p.doc_id}:{p.page_no}:{p.label}]" if p.label else f"[{p.doc_id}:{p.page_no}]"
    image_ref = None
    if hit.kind in IMAGE_KINDS:
        image_ref = f"/v1/pages/{p.doc_id}/{p.page_no}/image"
    return EvidenceBlock(
        tag=tag,
        text=p.text or "",
        score=hit.score,
        hit_id=hit.id,
        kind=hit.kind,
        doc_id=p.doc_id,
        page_no=p.page_no,
        label=p.label,
        image_ref=image_ref,
    )


def assemble_prompt(
    query: str,
    result: RetrievalResult,
    history: list[Turn],
    budget_units: int = DEFAULT_BUDGET_UNITS,
) -> Prompt:
    """Deterministic prompt template: preamble, tagged evidence blocks in hit
    order, history, query. Evidence is deduplicated, then dropped
    lowest-score-first until the whole prompt fits the whitespace-token
    budget; history is dropped oldest-first only after all evidence is gone.
    """
    query_units = len(query.split())
    if query_units > budget_units:
        raise BudgetTooSmall(f"query alone is {query_units} units, budget {budget_units}")

    merged = sorted(result.text_hits + result.image_hits, key=lambda h: (-h.score, h.id))
    blocks: list[EvidenceBlock] = []
    seen = set()
    for hit in merged:
        key = _block_key(hit)
        if key in seen:
            continue
        seen.add(key)
        blocks.append(_block_from_hit(hit))

    preamble_units = len(PROMPT_PREAMBLE.split())
    history_lines = [f"{turn.role.value}: {turn.text}" for turn in history]
    query_line = f"user: {query}"
    query_line_units = len(query_line.split())

    def total_units(blks: list[EvidenceBlock], hist: list[str], preamble: bool) -> int:
        units = (preamble_units if preamble else 0) + query_line_units
        units += sum(b.units() for b in blks)
        units += sum(len(line.split()) for line in hist)
        return units

    evidence_dropped = False
    while blocks and total_units(blocks, history_lines, True) > budget_units:
        lowest = min(range(len(blocks)), key=lambda i: (blocks[i].score, -blocks[i].hit_id))
        blocks.pop(lowest)
        evidence_dropped = True
    hist = list(history_lines)
    while hist and total_units(blocks, hist, True) > budget_units:
        hist.pop(0)
    use_preamble = total_units(blocks, hist, True) <= budget_units

    lines = []
    if use_preamble:
        lines.append(PROMPT_PREAMBLE)
    for block in blocks:
        lines.append(f"{block.tag} {block.text}".rstrip())
    lines.extend(hist)
    lines.append(query_line)
    image_refs = [b.image_ref for b in blocks if b.image_ref is not None]
    return Prompt(
        text="\n".join(lines),
        evidence=blocks,
        image_refs=image_refs,
        evidence_dropped=evidence_dropped,
    )


def generate_answer(prompt: Prompt, cfg: GenerationBackendConfig) -> str:
    if cfg.kind == BackendKind.STUB:
        if not prompt.evidence:
            return "ANSWER_FROM:NONE"
        top = prompt.evidence[0]
        snippet = " ".join(top.text.split()[:10])
        return f"ANSWER_FROM:{top.tag} {snippet}".rstrip()
    payload = {
        "prompt": prompt.text,
        "images": [{"ref": ref} for ref in prompt.image_refs],
        "max_output_units": cfg.max_output_units,
    }
    try:
        resp = httpx.post(cfg.endpoint, json=payload, timeout=cfg.timeout_ms / 1000.0)
    except httpx.HTTPError as exc:
        raise ProviderUnreachable(f"generation backend at {cfg.endpoint}: {exc}") from exc
    if resp.status_code != 200:
        raise ProviderBadResponse(f"generation backend returned HTTP {resp.status_code}")
    try:
        text = resp.json()["text"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProviderBadResponse(f"malformed generation response: {exc}") from exc
    if not isinstance(text, str):
        raise ProviderBadResponse("generation response text must be a string")
    return text


@dataclass
class _DocEntry:
    title: str
    records: list[corpus.PageRecord]
    # What was inserted into the index for this document. Image items keep the
    # raw (pre-projection) vector so a retrained projection can re-project
    # without re-embedding.
    text_items: list[tuple[np.ndarray, Payload]] = field(default_factory=list)
    image_items: list[tuple[np.ndarray, RecordKind, Payload]] = field(default_factory=list)


class RagEngine:
    """Ties corpus, embedding providers, projection, and the vector index into
    one retrieval + chat surface. Index writes are atomic per bundle."""

    def __init__(
        self,
        text_embedder: embed.EmbedderConfig,
        image_embedder: embed.EmbedderConfig,
        projection: align.ProjectionModel | None = None,
        k_text: int = DEFAULT_K_TEXT,
        k_image: int = DEFAULT_K_IMAGE,
        history_turns: int = DEFAULT_HISTORY_TURNS,
        budget_units: int = DEFAULT_BUDGET_UNITS,
        chunk_max_units: int = corpus.DEFAULT_MAX_UNITS,
        chunk_overlap: int = corpus.DEFAULT_OVERLAP,
    ):
        if text_embedder.modality != embed.Modality.TEXT:
            raise ValueError("text_embedder must have text modality")
        if image_embedder.modality != embed.Modality.IMAGE:
            raise ValueError("image_embedder must have image modality")
        if projection is None:
            projection = align.ProjectionModel.initialize(
                d_img=image_embedder.dim, d_txt=text_embedder.dim, seed=0
            )
        if projection.d_img != image_embedder.dim or projection.d_txt != text_embedder.dim:
            raise DimMismatch(
                f"projection ({projection.d_img}->{projection.d_txt}) does not bridge "
                f"image dim {image_embedder.dim} to text dim {text_embedder.dim}"
            )
        self.text_embedder = text_embedder
        self.image_embedder = image_embedder
        self.projection = projection
        self.k_text = k_text
        self.k_image = k_image
        self.history_turns = history_turns
        self.budget_units = budget_units
        self.chunk_max_units = chunk_max_units
        self.chunk_overlap = chunk_overlap
        self.index = VectorIndex()
        self.documents: dict[str, _DocEntry] = {}
        self.sessions: dict[str, ChatSession] = {}
        self._lock = threading.RLock()
        self._session_locks: dict[str, threading.Lock] = {}

    # --- ingestion ---------------------------------------------------------

    def ingest(self, bundle: corpus.DocumentBundle, check_images: bool = True) -> list[corpus.PageRecord]:
        """Validate, embed, and index a bundle. All-or-nothing: any failure
        while validating or embedding leaves the engine unchanged."""
        with self._lock:
            if bundle.doc_id in self.documents:
                raise DuplicateDocId(bundle.doc_id)
        records = corpus.ingest_bundle(
            bundle, self.chunk_max_units, self.chunk_overlap, check_images=check_images
        )
        text_items: list[tuple[np.ndarray, Payload]] = []
        image_items: list[tuple[np.ndarray, RecordKind, Payload]] = []
        for rec in records:
            for chunk in rec.chunks:
                vec = embed.embed_text(chunk.text, self.text_embedder)
                text_items.append(
                    (vec.values, Payload(rec.doc_id, rec.page_no, chunk_id=chunk.chunk_id, text=chunk.text))
                )
            page_vec = embed.embed_image(rec.image_ref, self.image_embedder)
            image_items.append((page_vec.values, RecordKind.PAGE_IMAGE, Payload(rec.doc_id, rec.page_no)))
            for fig in rec.figures:
                if fig.image_ref is None:
                    continue
                fig_vec = embed.embed_image(fig.image_ref, self.image_embedder)
                image_items.append(
                    (
                        fig_vec.values,
                        RecordKind.FIGURE_IMAGE,
                        Payload(rec.doc_id, rec.page_no, label=fig.label, text=fig.caption_clean),
                    )
                )
        with self._lock:
            if bundle.doc_id in self.documents:
                raise DuplicateDocId(bundle.doc_id)
            entry = _DocEntry(title=bundle.title, records=records,
                              text_items=text_items, image_items=image_items)
            self._insert_items(entry)
            self.documents[bundle.doc_id] = entry
        return records

    def _insert_items(self, entry: _DocEntry) -> None:
        for vec, payload in entry.text_items:
            self.index.insert(vec, Space.TEXT, RecordKind.TEXT_CHUNK, payload)
        for raw_vec, kind, payload in entry.image_items:
            projected = align.project(raw_vec, self.projection)
            self.index.insert(projected, Space.IMAGE_PROJECTED, kind, payload)

    def set_projection(self, model: align.ProjectionModel) -> None:
        """Swap the projection and rebuild the index: image records are
        re-projected from their stored raw vectors, text records reused."""
        if model.d_img != self.image_embedder.dim or model.d_txt != self.text_embedder.dim:
            raise DimMismatch("replacement projection does not bridge the configured dims")
        with self._lock:
            self.projection = model
            self.index = VectorIndex()
            for entry in self.documents.values():
                self._insert_items(entry)

    # --- retrieval and chat --------------------------------------------------

    def embed_query(self, query: str) -> np.ndarray:
        return embed.embed_text(query, self.text_embedder).values

    def retrieve(self, query: str, k_text: int | None = None, k_image: int | None = None) -> RetrievalResult:
        """Embed the query once, then search text chunks and projected image
        records separately (both live in text space)."""
        k_text = self.k_text if k_text is None else k_text
        k_image = self.k_image if k_image is None else k_image
        qvec = self.embed_query(query)
        text_hits: list[SearchHit] = []
        image_hits: list[SearchHit] = []
        if len(self.index) > 0:
            if k_text > 0:
                text_hits = self.index.search_flat(
                    qvec, k_text, SearchFilter(kinds=frozenset({RecordKind.TEXT_CHUNK}))
                )
            if k_image > 0:
                image_hits = self.index.search_flat(qvec, k_image, SearchFilter(kinds=IMAGE_KINDS))
        return RetrievalResult(text_hits=text_hits, image_hits=image_hits, query_vector=qvec)

    def create_session(self) -> ChatSession:
        session = ChatSession(session_id=uuid.uuid4().hex)
        with self._lock:
            self.sessions[session.session_id] = session
            self._session_locks[session.session_id] = threading.Lock()
        return session

    def get_session(self, session_id: str) -> ChatSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionNotFound(session_id)
        return session

    def chat_answer(
        self,
        session_id: str,
        query: str,
        backend: GenerationBackendConfig,
        k_text: int | None = None,
        k_image: int | None = None,
    ) -> Turn:
        """Run one chat turn: retrieve, assemble, generate, then commit the
        User and Assistant turns together. Citations are exactly the evidence
        blocks that survived budgeting. On backend failure no turn is kept."""
        session = self.get_session(session_id)
        lock = self._session_locks[session_id]
        with lock:
            history = session.turns[-self.history_turns:]
            result = self.retrieve(query, k_text=k_text, k_image=k_image)
            prompt = assemble_prompt(query, result, history, self.budget_units)
            answer = generate_answer(prompt, backend)
            citations = [
                Citation(doc_id=b.doc_id, page_no=b.page_no, kind=b.kind, label=b.label,
                         snippet=b.text or None, score=b.score)
                for b in prompt.evidence
            ]
            session.append_turn(Turn(role=Role.USER, text=query, timestamp=_now()))
            turn = Turn(role=Role.ASSISTANT, text=answer, citations=citations, timestamp=_now())
            session.append_turn(turn)
            return turn

    # --- lookups used by the server -----------------------------------------

    def list_documents(self) -> list[dict]:
        with self._lock:
            return [
                {"doc_id": doc_id, "title": entry.title, "pages": len(entry.records)}
                for doc_id, entry in sorted(self.documents.items())
            ]

    def page_image_ref(self, doc_id: str, page_no: int) -> str | None:
        entry = self.documents.get(doc_id)
        if entry is None:
            return None
        for rec in entry.records:
            if rec.page_no == page_no:
                return rec.image_ref
        return None

    def has_page(self, doc_id: str, page_no: int) -> bool:
        return self.page_image_ref(doc_id, page_no) is not None

    # --- durable state (CLI workflows) ---------------------------------------

    def save_state(self, data_dir: str) -> None:
        """Persist corpus and index under data_dir. Sessions are ephemeral."""
        os.makedirs(data_dir, exist_ok=True)
        with self._lock:
            docs = []
            for doc_id, entry in sorted(self.documents.items()):
                docs.append(
                    {
                        "doc_id": doc_id,
                        "title": entry.title,
                        "records": [corpus.record_to_dict(r) for r in entry.records],
                        "text_items": [
                            {"vector": vec.tolist(), "payload": payload.to_json()}
                            for vec, payload in entry.text_items
                        ],
                        "image_items": [
                            {"vector": vec.tolist(), "kind": int(kind), "payload": payload.to_json()}
                            for vec, kind, payload in entry.image_items
                        ],
                    }
                )
            with open(os.path.join(data_dir, "corpus.json"), "w", encoding="utf-8") as fh:
                json.dump({"documents": docs}, fh)
            self.index.persist(os.path.join(data_dir, "index.frix"))
            align.save_model(self.projection, os.path.join(data_dir, "projection.frwp"))

    def load_state(self, data_dir: str) -> bool:
        """Restore state saved by save_state. Returns False if absent."""
        corpus_path = os.path.join(data_dir, "corpus.json")
        index_path = os.path.join(data_dir, "index.frix")
        if not (os.path.isfile(corpus_path) and os.path.isfile(index_path)):
            return False
        with open(corpus_path, encoding="utf-8") as fh:
            blob = json.load(fh)
        model_path = os.path.join(data_dir, "projection.frwp")
        with self._lock:
            if os.path.isfile(model_path):
                self.projection = align.load_model(model_path)
            self.documents = {}
            for doc in blob["documents"]:
                entry = _DocEntry(
                    title=doc["title"],
                    records=[corpus.record_from_dict(r) for r in doc["records"]],
                    text_items=[
                        (np.asarray(item["vector"], dtype=np.float64), Payload.from_json(item["payload"]))
                        for item in doc["text_items"]
                    ],
                    image_items=[
                        (
                            np.asarray(item["vector"], dtype=np.float64),
                            RecordKind(item["kind"]),
                            Payload.from_json(item["payload"]),
                        )
                        for item in doc["image_items"]
                    ],
                )
                self.documents[doc["doc_id"]] = entry
            self.index = VectorIndex.load(index_path)
        return True

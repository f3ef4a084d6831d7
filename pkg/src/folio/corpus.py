"""Document bundle ingestion: manifest parsing, figure-caption extraction,
caption cleaning, and text chunking.

A bundle is the normalized post-OCR form of a document: one raster image and
one extracted-text string per page, plus optional per-page figure image
references. PDF rasterization and OCR happen upstream.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from .errors import InvalidChunking, MalformedManifest, MissingImage

DOC_ID_RE = re.compile(r"[A-Za-z0-9._-]+")

# Caption line grammar: the line starts with Fig / Fig. / Figure, then an
# integer, then '.' or ':', then the caption text running to end of line.
CAPTION_LINE_RE = re.compile(r"^(Fig(?:ure)?\.?)[ \t]*(\d+)[ \t]*[.:][ \t]*(\S.*)$")
LABEL_PREFIX_RE = re.compile(r"^(Fig(?:ure)?\.?)[ \t]*(\d+)[ \t]*[.:][ \t]*")

TRAILING_PUNCT_RE = re.compile(r"([.!?,;:])[.!?,;:]+$")

DEFAULT_MAX_UNITS = 512
DEFAULT_OVERLAP = 64

HEADER_KEYS = {"doc_id", "title", "pages"}
PAGE_KEYS = {"page_no", "image_ref", "text", "figure_image_refs"}
FIGREF_KEYS = {"label_hint", "image_ref"}


@dataclass
class FigureRef:
    """A figure image reference carried by a page source."""

    image_ref: str
    label_hint: str | None = None


@dataclass
class PageSource:
    page_no: int
    image_ref: str
    text: str
    figure_image_refs: list[FigureRef] = field(default_factory=list)


@dataclass
class DocumentBundle:
    doc_id: str
    title: str
    pages: list[PageSource]


@dataclass
class FigureCaptionPair:
    label: str
    caption_raw: str
    caption_clean: str = ""
    image_ref: str | None = None


@dataclass
class Chunk:
    chunk_id: str
    text: str
    unit_span: tuple[int, int]


@dataclass
class PageRecord:
    doc_id: str
    page_no: int
    image_ref: str
    text: str
    figures: list[FigureCaptionPair] = field(default_factory=list)
    chunks: list[Chunk] = field(default_factory=list)


def _is_url(ref: str) -> bool:
    return ref.startswith("http://") or ref.startswith("https://")


def resolve_ref(ref: str, base_dir: str | None) -> str:
    """Resolve a path reference relative to the manifest directory.

    URLs and absolute paths pass through unchanged.
    """
    if _is_url(ref) or os.path.isabs(ref) or base_dir is None:
        return ref
    return os.path.normpath(os.path.join(base_dir, ref))


def parse_manifest(text: str, base_dir: str | None = None) -> DocumentBundle:
    """Parse a JSONL bundle manifest into a DocumentBundle.

    Line 1 is the header {doc_id, title, pages}; the next `pages` lines each
    describe one page. Unknown keys are rejected. Relative image paths are
    resolved against `base_dir`.
    """
    lines = text.split("\n")
    # Trailing newline produces one empty tail element; drop it.
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedManifest(1, "empty manifest")

    header = _parse_json_line(lines[0], 1)
    _require_keys(header, HEADER_KEYS, 1)
    doc_id = header["doc_id"]
    title = header["title"]
    n_pages = header["pages"]
    if not isinstance(doc_id, str) or not DOC_ID_RE.fullmatch(doc_id):
        raise MalformedManifest(1, f"invalid doc_id: {doc_id!r}")
    if not isinstance(title, str):
        raise MalformedManifest(1, "title must be a string")
    if not isinstance(n_pages, int) or isinstance(n_pages, bool) or n_pages < 0:
        raise MalformedManifest(1, "pages must be a nonnegative integer")
    if len(lines) - 1 != n_pages:
        raise MalformedManifest(
            1, f"header declares {n_pages} pages but manifest has {len(lines) - 1} page lines"
        )

    pages: list[PageSource] = []
    for i in range(n_pages):
        lineno = i + 2
        obj = _parse_json_line(lines[i + 1], lineno)
        _require_keys(obj, PAGE_KEYS, lineno)
        page_no = obj["page_no"]
        if not isinstance(page_no, int) or isinstance(page_no, bool) or page_no < 1:
            raise MalformedManifest(lineno, f"page_no must be a positive integer, got {page_no!r}")
        if page_no != i + 1:
            raise MalformedManifest(lineno, f"expected page_no {i + 1}, got {page_no} (pages must be 1-based with no gaps)")
        image_ref = obj["image_ref"]
        if not isinstance(image_ref, str) or not image_ref:
            raise MalformedManifest(lineno, "image_ref must be a nonempty string")
        page_text = obj["text"]
        if not isinstance(page_text, str):
            raise MalformedManifest(lineno, "text must be a string")
        raw_refs = obj["figure_image_refs"]
        if not isinstance(raw_refs, list):
            raise MalformedManifest(lineno, "figure_image_refs must be a list")
        fig_refs: list[FigureRef] = []
        for entry in raw_refs:
            if not isinstance(entry, dict):
                raise MalformedManifest(lineno, "figure_image_refs entries must be objects")
            unknown = set(entry) - FIGREF_KEYS
            if unknown:
                raise MalformedManifest(lineno, f"unknown keys in figure_image_refs entry: {sorted(unknown)}")
            ref = entry.get("image_ref")
            if not isinstance(ref, str) or not ref:
                raise MalformedManifest(lineno, "figure image_ref must be a nonempty string")
            hint = entry.get("label_hint")
            if hint is not None and not isinstance(hint, str):
                raise MalformedManifest(lineno, "label_hint must be a string or null")
            fig_refs.append(FigureRef(image_ref=resolve_ref(ref, base_dir), label_hint=hint))
        pages.append(
            PageSource(
                page_no=page_no,
                image_ref=resolve_ref(image_ref, base_dir),
                text=page_text,
                figure_image_refs=fig_refs,
            )
        )
    return DocumentBundle(doc_id=doc_id, title=title, pages=pages)


def load_manifest(path: str) -> DocumentBundle:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_manifest(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _parse_json_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(lineno, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise MalformedManifest(lineno, "each manifest line must be a JSON object")
    return obj


def _require_keys(obj: dict, keys: set[str], lineno: int) -> None:
    unknown = set(obj) - keys
    if unknown:
        raise MalformedManifest(lineno, f"unknown keys: {sorted(unknown)}")
    missing = keys - set(obj)
    if missing:
        raise MalformedManifest(lineno, f"missing keys: {sorted(missing)}")


def validate_bundle(bundle: DocumentBundle) -> None:
    """Check DocumentBundle invariants, independent of manifest parsing.

    Raises MalformedManifest with the line number the page would occupy in
    manifest form (header = 1, page i = i + 2).
    """
    if not bundle.doc_id or not DOC_ID_RE.fullmatch(bundle.doc_id):
        raise MalformedManifest(1, f"invalid doc_id: {bundle.doc_id!r}")
    for i, page in enumerate(bundle.pages):
        lineno = i + 2
        if page.page_no != i + 1:
            raise MalformedManifest(
                lineno, f"expected page_no {i + 1}, got {page.page_no} (pages must be 1-based with no gaps)"
            )
        if not page.image_ref:
            raise MalformedManifest(lineno, "image_ref must be nonempty")


def extract_figure_pairs(page_text: str) -> list[FigureCaptionPair]:
    """Extract raw figure-caption pairs from caption lines, in document order.

    Only lines matching the caption grammar produce pairs; everything else is
    ignored, so the operation is insensitive to surrounding prose.
    """
    pairs = []
    for line in page_text.split("\n"):
        m = CAPTION_LINE_RE.match(line)
        if m:
            label = f"{m.group(1)} {m.group(2)}"
            pairs.append(FigureCaptionPair(label=label, caption_raw=m.group(3)))
    return pairs


def clean_caption(pair: FigureCaptionPair) -> FigureCaptionPair | None:
    """Produce caption_clean from caption_raw, or None if the caption is
    rejected (fewer than 2 alphabetic tokens after cleaning).

    Cleaning: strip any leading label text, collapse whitespace runs, collapse
    trailing repeated punctuation. Idempotent.
    """
    text = pair.caption_raw.strip()
    # Strip leading labels to a fixpoint so cleaning is idempotent even for
    # captions that themselves start with label-like text.
    while True:
        m = LABEL_PREFIX_RE.match(text)
        if not m:
            break
        text = text[m.end():]
    text = " ".join(text.split())
    text = TRAILING_PUNCT_RE.sub(r"\1", text)
    alpha_tokens = [t for t in text.split() if any(c.isalpha() for c in t)]
    if len(alpha_tokens) < 2:
        return None
    return FigureCaptionPair(
        label=pair.label,
        caption_raw=pair.caption_raw,
        caption_clean=text,
        image_ref=pair.image_ref,
    )


def chunk_text(
    text: str,
    max_units: int = DEFAULT_MAX_UNITS,
    overlap: int = DEFAULT_OVERLAP,
    *,
    doc_id: str = "",
    page_no: int = 0,
) -> list[Chunk]:
    """Split text into whitespace-token chunks by greedy left-to-right tiling.

    Consecutive chunks share exactly `overlap` tokens; the final chunk ends at
    the last token. Empty text yields no chunks.
    """
    if max_units < 1:
        raise InvalidChunking(f"max_units must be >= 1, got {max_units}")
    if overlap < 0 or overlap >= max_units:
        raise InvalidChunking(f"overlap must satisfy 0 <= overlap < max_units, got {overlap}")
    tokens = text.split()
    n = len(tokens)
    if n == 0:
        return []
    stride = max_units - overlap
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + max_units, n)
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}:{page_no}:{len(chunks)}",
                text=" ".join(tokens[start:end]),
                unit_span=(start, end),
            )
        )
        if end == n:
            break
        start += stride
    return chunks


def _associate_figure_images(
    pairs: list[FigureCaptionPair], refs: list[FigureRef]
) -> None:
    """Attach figure image refs to caption pairs: exact label_hint match first,
    then remaining refs to remaining pairs in order of appearance.
    """
    used = [False] * len(refs)
    for pair in pairs:
        for i, ref in enumerate(refs):
            if used[i]:
                continue
            if ref.label_hint is not None and ref.label_hint.strip() == pair.label:
                pair.image_ref = ref.image_ref
                used[i] = True
                break
    leftovers = (ref for i, ref in enumerate(refs) if not used[i])
    for pair in pairs:
        if pair.image_ref is None:
            ref = next(leftovers, None)
            if ref is None:
                break
            pair.image_ref = ref.image_ref


def ingest_bundle(
    bundle: DocumentBundle,
    max_units: int = DEFAULT_MAX_UNITS,
    overlap: int = DEFAULT_OVERLAP,
    check_images: bool = True,
) -> list[PageRecord]:
    """Turn a validated bundle into one PageRecord per page, in page order,
    with cleaned figure pairs and text chunks populated.

    Rejected captions (too little alphabetic content) are dropped. URL image
    refs are not existence-checked.
    """
    validate_bundle(bundle)
    if check_images:
        for page in bundle.pages:
            for ref in [page.image_ref] + [r.image_ref for r in page.figure_image_refs]:
                if not _is_url(ref) and not os.path.isfile(ref):
                    raise MissingImage(ref)
    records = []
    for page in bundle.pages:
        pairs = []
        for raw_pair in extract_figure_pairs(page.text):
            cleaned = clean_caption(raw_pair)
            if cleaned is not None:
                pairs.append(cleaned)
        _associate_figure_images(pairs, page.figure_image_refs)
        records.append(
            PageRecord(
                doc_id=bundle.doc_id,
                page_no=page.page_no,
                image_ref=page.image_ref,
                text=page.text,
                figures=pairs,
                chunks=chunk_text(
                    page.text, max_units, overlap, doc_id=bundle.doc_id, page_no=page.page_no
                ),
            )
        )
    return records


def record_to_dict(rec: PageRecord) -> dict:
    return {
        "doc_id": rec.doc_id,
        "page_no": rec.page_no,
        "image_ref": rec.image_ref,
        "text": rec.text,
        "figures": [
            {"label": f.label, "caption_raw": f.caption_raw,
             "caption_clean": f.caption_clean, "image_ref": f.image_ref}
            for f in rec.figures
        ],
        "chunks": [
            {"chunk_id": c.chunk_id, "text": c.text, "unit_span": list(c.unit_span)}
            for c in rec.chunks
        ],
    }


def record_from_dict(obj: dict) -> PageRecord:
    return PageRecord(
        doc_id=obj["doc_id"],
        page_no=obj["page_no"],
        image_ref=obj["image_ref"],
        text=obj["text"],
        figures=[FigureCaptionPair(**f) for f in obj["figures"]],
        chunks=[
            Chunk(chunk_id=c["chunk_id"], text=c["text"], unit_span=tuple(c["unit_span"]))
            for c in obj["chunks"]
        ],
    )


def records_to_manifest(title: str, records: list[PageRecord]) -> str:
    """Serialize PageRecords back to bundle-manifest JSONL.

    Re-ingesting the output with the same chunking parameters reproduces the
    records field-for-field.
    """
    if not records:
        raise ValueError("no records to serialize")
    doc_id = records[0].doc_id
    lines = [json.dumps({"doc_id": doc_id, "title": title, "pages": len(records)})]
    for rec in records:
        fig_refs = [
            {"label_hint": f.label, "image_ref": f.image_ref}
            for f in rec.figures
            if f.image_ref is not None
        ]
        lines.append(
            json.dumps(
                {
                    "page_no": rec.page_no,
                    "image_ref": rec.image_ref,
                    "text": rec.text,
                    "figure_image_refs": fig_refs,
                }
            )
        )
    return "\n".join(lines) + "\n"

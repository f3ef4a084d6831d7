"""Shared fixtures: bundle builders and stub-provider engines."""

import pytest

from folio.corpus import DocumentBundle, FigureRef, PageSource
from folio.embed import EmbedderConfig, Modality, ProviderKind
from folio.rag import RagEngine


def write_page_image(tmp_path, name: str, data: bytes | None = None):
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / name
    path.write_bytes(data if data is not None else f"IMG:{name}".encode())
    return str(path)


def build_bundle(tmp_path, doc_id="docA", title="Test document", page_texts=None, figure_refs=None):
    """Bundle with one synthetic image file per page. figure_refs maps
    1-based page numbers to lists of (label_hint, file name)."""
    page_texts = page_texts if page_texts is not None else ["page one text", "page two text"]
    figure_refs = figure_refs or {}
    pages = []
    for i, text in enumerate(page_texts, start=1):
        refs = []
        for hint, name in figure_refs.get(i, []):
            refs.append(FigureRef(image_ref=write_page_image(tmp_path, name), label_hint=hint))
        pages.append(
            PageSource(
                page_no=i,
                image_ref=write_page_image(tmp_path, f"{doc_id}_p{i}.png"),
                text=text,
                figure_image_refs=refs,
            )
        )
    return DocumentBundle(doc_id=doc_id, title=title, pages=pages)


def stub_text_config(dim=64, seed=1):
    return EmbedderConfig(provider_kind=ProviderKind.STUB, dim=dim, modality=Modality.TEXT, stub_seed=seed)


def stub_image_config(dim=64, seed=2):
    return EmbedderConfig(provider_kind=ProviderKind.STUB, dim=dim, modality=Modality.IMAGE, stub_seed=seed)


@pytest.fixture
def stub_engine():
    def make(dim=64, **kwargs):
        return RagEngine(
            text_embedder=stub_text_config(dim=dim),
            image_embedder=stub_image_config(dim=dim),
            **kwargs,
        )

    return make

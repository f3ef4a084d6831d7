"""HTTP service exposing ingestion, retrieval, chat sessions, and page-image
serving under a /v1 prefix.

Every non-2xx response body is an ApiError JSON object:
{"status": int, "code": str, "message": str} with code one of
bad_request, not_found, provider_unreachable, conflict, internal.
"""

from __future__ import annotations

import json
import mimetypes
import os
import re

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import (
    FileResponse,
    JSONResponse,
    PlainTextResponse,
    RedirectResponse,
    StreamingResponse,
)
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import corpus, evaluation
from .errors import (
    DuplicateDocId,
    EmptyBenchmark,
    FolioError,
    MalformedManifest,
    MissingImage,
    ProviderBadResponse,
    ProviderUnreachable,
    SessionNotFound,
)
from .rag import GenerationBackendConfig, RagEngine

_STATUS_CODES = {
    400: "bad_request",
    404: "not_found",
    409: "conflict",
    502: "provider_unreachable",
    500: "internal",
}


class ApiException(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"status": status, "code": code, "message": message},
    )


class MessageIn(BaseModel):
    text: str


class EvalRunIn(BaseModel):
    mode: str = "retrieval"
    items: list[dict]
    ks: list[int] = [1, 3, 5]


def _sse_chunks(text: str) -> list[str]:
    # Chunks concatenate back to the exact answer text.
    return re.findall(r"\S+\s*|\s+", text)


def create_app(engine: RagEngine, generator: GenerationBackendConfig, data_dir: str = ".") -> FastAPI:
    app = FastAPI(title="folio", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiException)
    async def _api_exc(_req: Request, exc: ApiException):
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(StarletteHTTPException)
    async def _http_exc(_req: Request, exc: StarletteHTTPException):
        code = _STATUS_CODES.get(exc.status_code, "internal")
        return _error_response(exc.status_code, code, str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def _validation_exc(_req: Request, exc: RequestValidationError):
        return _error_response(400, "bad_request", str(exc.errors()))

    @app.exception_handler(FolioError)
    async def _folio_exc(_req: Request, exc: FolioError):
        return _error_response(500, "internal", str(exc))

    @app.get("/v1/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.post("/v1/documents", status_code=201)
    async def ingest_document(request: Request):
        body = await request.body()
        try:
            bundle = corpus.parse_manifest(body.decode("utf-8"), base_dir=data_dir)
            records = engine.ingest(bundle)
        except MalformedManifest as exc:
            raise ApiException(400, "bad_request", str(exc)) from exc
        except MissingImage as exc:
            raise ApiException(400, "bad_request", str(exc)) from exc
        except DuplicateDocId as exc:
            raise ApiException(409, "conflict", str(exc)) from exc
        except UnicodeDecodeError as exc:
            raise ApiException(400, "bad_request", f"manifest must be UTF-8: {exc}") from exc
        except (ProviderUnreachable, ProviderBadResponse) as exc:
            raise ApiException(502, "provider_unreachable", str(exc)) from exc
        return {"doc_id": bundle.doc_id, "pages": len(records)}

    @app.get("/v1/documents")
    def list_documents():
        return engine.list_documents()

    @app.get("/v1/pages/{doc_id}/{page_no}/image")
    def page_image(doc_id: str, page_no: int):
        ref = engine.page_image_ref(doc_id, page_no)
        if ref is None:
            raise ApiException(404, "not_found", f"unknown page {doc_id}/{page_no}")
        if ref.startswith("http://") or ref.startswith("https://"):
            return RedirectResponse(ref)
        if not os.path.isfile(ref):
            raise ApiException(404, "not_found", f"image file missing for {doc_id}/{page_no}")
        media_type = mimetypes.guess_type(ref)[0] or "application/octet-stream"
        return FileResponse(ref, media_type=media_type)

    @app.post("/v1/sessions", status_code=201)
    def create_session():
        session = engine.create_session()
        return {"session_id": session.session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, message: MessageIn, stream: int = 0):
        try:
            turn = engine.chat_answer(session_id, message.text, generator)
        except SessionNotFound as exc:
            raise ApiException(404, "not_found", str(exc)) from exc
        except (ProviderUnreachable, ProviderBadResponse) as exc:
            raise ApiException(502, "provider_unreachable", str(exc)) from exc
        if not stream:
            return turn.to_dict()

        def event_stream():
            for chunk in _sse_chunks(turn.text):
                yield f"event: token\ndata: {json.dumps({'text': chunk})}\n\n"
            yield f"event: done\ndata: {json.dumps(turn.to_dict())}\n\n"

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    @app.post("/v1/eval/run")
    def eval_run(body: EvalRunIn):
        try:
            items = [evaluation.BenchmarkItem(**item) for item in body.items]
        except (TypeError, ValueError) as exc:
            raise ApiException(400, "bad_request", f"invalid benchmark items: {exc}") from exc
        try:
            if body.mode == "retrieval":
                report = evaluation.run_retrieval_eval(engine, items, body.ks)
            elif body.mode == "qa":
                report = evaluation.run_qa_eval(engine, items, generator)
            else:
                raise ApiException(400, "bad_request", f"unknown eval mode: {body.mode}")
        except EmptyBenchmark as exc:
            raise ApiException(400, "bad_request", str(exc)) from exc
        except (ProviderUnreachable, ProviderBadResponse) as exc:
            raise ApiException(502, "provider_unreachable", str(exc)) from exc
        return report.to_dict()

    return app

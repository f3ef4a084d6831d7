"""Embedding providers: a deterministic stub for tests and a remote HTTP
provider speaking a single POST protocol.

All vectors leaving this module are unit-norm; cosine similarity is therefore
a plain dot product everywhere downstream.
"""

from __future__ import annotations

import base64
import enum
import os
import threading
from dataclasses import dataclass

import httpx
import numpy as np

from .errors import (
    DimMismatch,
    EmptyInput,
    MissingImage,
    ProviderBadResponse,
    ProviderUnreachable,
)

NORM_TOL = 1e-6

# Upper bound on concurrent requests per remote endpoint.
MAX_IN_FLIGHT = 8

_semaphores: dict[str, threading.BoundedSemaphore] = {}
_semaphores_lock = threading.Lock()

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class Modality(str, enum.Enum):
    TEXT = "text"
    IMAGE = "image"


class ProviderKind(str, enum.Enum):
    REMOTE_HTTP = "remote_http"
    STUB = "stub"


@dataclass
class EmbeddingVector:
    """A modality-tagged unit-norm vector."""

    dim: int
    values: np.ndarray
    modality: Modality

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.dim,):
            raise DimMismatch(f"expected {self.dim} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ProviderBadResponse("non-finite embedding values")
        norm = float(np.linalg.norm(self.values))
        if abs(norm - 1.0) > NORM_TOL:
            raise ProviderBadResponse(f"embedding norm {norm} not within {NORM_TOL} of 1")


@dataclass
class EmbedderConfig:
    provider_kind: ProviderKind
    dim: int
    modality: Modality
    endpoint: str | None = None
    timeout_ms: int = 5000
    stub_seed: int = 0

    def __post_init__(self):
        if self.provider_kind == ProviderKind.REMOTE_HTTP and not self.endpoint:
            raise ValueError("RemoteHttp provider requires an endpoint")
        if self.dim < 1:
            raise ValueError("dim must be positive")


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def stub_embed(data: bytes, dim: int, seed: int, modality: Modality = Modality.TEXT) -> EmbeddingVector:
    """Deterministic embedding of raw bytes.

    The generator state is the FNV-1a 64-bit hash of `data` XOR `seed`; values
    are splitmix64 outputs mapped to [-1, 1) via the top 53 bits, then
    L2-normalized. A pure function of (data, dim, seed).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    state = _fnv1a64(data) ^ (seed & _MASK64)
    raw = np.empty(dim, dtype=np.float64)
    for i in range(dim):
        state, z = _splitmix64(state)
        raw[i] = ((z >> 11) * 2.0**-53) * 2.0 - 1.0
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:  # astronomically unlikely; keep determinism anyway
        raw[0] = 1.0
        norm = 1.0
    return EmbeddingVector(dim=dim, values=raw / norm, modality=modality)


def _stub_text_vector(text: str, cfg: EmbedderConfig) -> EmbeddingVector:
    # Bag-of-tokens construction: texts sharing tokens get correlated vectors,
    # which is what retrieval tests key on.
    tokens = text.split()
    if not tokens:
        raise EmptyInput("cannot embed empty text")
    acc = np.zeros(cfg.dim, dtype=np.float64)
    for tok in tokens:
        acc += stub_embed(tok.encode("utf-8"), cfg.dim, cfg.stub_seed).values
    norm = float(np.linalg.norm(acc))
    if norm < 1e-12:
        return stub_embed(text.encode("utf-8"), cfg.dim, cfg.stub_seed)
    return EmbeddingVector(dim=cfg.dim, values=acc / norm, modality=Modality.TEXT)


def _endpoint_semaphore(endpoint: str) -> threading.BoundedSemaphore:
    with _semaphores_lock:
        sem = _semaphores.get(endpoint)
        if sem is None:
            sem = threading.BoundedSemaphore(MAX_IN_FLIGHT)
            _semaphores[endpoint] = sem
        return sem


def _remote_embed(inputs: list, cfg: EmbedderConfig) -> list[EmbeddingVector]:
    payload = {"modality": cfg.modality.value, "inputs": inputs}
    sem = _endpoint_semaphore(cfg.endpoint)
    with sem:
        try:
            resp = httpx.post(cfg.endpoint, json=payload, timeout=cfg.timeout_ms / 1000.0)
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"embedder at {cfg.endpoint}: {exc}") from exc
    if resp.status_code != 200:
        raise ProviderBadResponse(f"embedder returned HTTP {resp.status_code}")
    try:
        body = resp.json()
        vectors = body["vectors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProviderBadResponse(f"malformed embedder response: {exc}") from exc
    if not isinstance(vectors, list) or len(vectors) != len(inputs):
        raise ProviderBadResponse(
            f"expected {len(inputs)} vectors, got {len(vectors) if isinstance(vectors, list) else type(vectors)}"
        )
    out = []
    for vec in vectors:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (cfg.dim,):
            raise ProviderBadResponse(f"expected dim {cfg.dim}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ProviderBadResponse("non-finite values in embedder response")
        norm = float(np.linalg.norm(arr))
        if norm < 1e-12:
            raise ProviderBadResponse("zero vector in embedder response")
        # Normalize at the boundary; remote vectors are not trusted to be unit.
        out.append(EmbeddingVector(dim=cfg.dim, values=arr / norm, modality=cfg.modality))
    return out


def embed_text(text: str, cfg: EmbedderConfig) -> EmbeddingVector:
    if cfg.modality != Modality.TEXT:
        raise ValueError("embed_text requires a text-modality config")
    if not text.strip():
        raise EmptyInput("cannot embed empty text")
    if cfg.provider_kind == ProviderKind.STUB:
        return _stub_text_vector(text, cfg)
    return _remote_embed([text], cfg)[0]


def embed_image(image_ref: str, cfg: EmbedderConfig) -> EmbeddingVector:
    """Embed an image by reference. The stub hashes raw file bytes (or the URL
    string for non-local refs), so distinct files yield distinct vectors.
    """
    if cfg.modality != Modality.IMAGE:
        raise ValueError("embed_image requires an image-modality config")
    is_url = image_ref.startswith("http://") or image_ref.startswith("https://")
    if cfg.provider_kind == ProviderKind.STUB:
        if is_url:
            data = image_ref.encode("utf-8")
        else:
            if not os.path.isfile(image_ref):
                raise MissingImage(image_ref)
            with open(image_ref, "rb") as fh:
                data = fh.read()
        return stub_embed(data, cfg.dim, cfg.stub_seed, modality=Modality.IMAGE)
    if not is_url and not os.path.isfile(image_ref):
        raise MissingImage(image_ref)
    if is_url:
        payload = base64.b64encode(image_ref.encode("utf-8")).decode("ascii")
    else:
        with open(image_ref, "rb") as fh:
            payload = base64.b64encode(fh.read()).decode("ascii")
    return _remote_embed([payload], cfg)[0]


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine similarity of two unit vectors (their dot product)."""
    if u.dim != v.dim:
        raise DimMismatch(f"cosine over dims {u.dim} and {v.dim}")
    return float(np.clip(np.dot(u.values, v.values), -1.0, 1.0))

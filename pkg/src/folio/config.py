"""Application configuration with deterministic resolution:
flags > environment (FOLIO_ prefix) > config file (TOML or JSON) > defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .align import ProjectionModel, load_model
from .embed import EmbedderConfig, Modality, ProviderKind
from .index import HnswConfig
from .rag import (
    DEFAULT_BUDGET_UNITS,
    DEFAULT_HISTORY_TURNS,
    DEFAULT_K_IMAGE,
    DEFAULT_K_TEXT,
    BackendKind,
    GenerationBackendConfig,
)

ENV_PREFIX = "FOLIO_"

# Flat key -> default. Sections map to dotted keys; the matching environment
# variable is the key uppercased with dots replaced by underscores.
DEFAULTS: dict[str, object] = {
    "bind_addr": "127.0.0.1:8765",
    "data_dir": "./folio-data",
    "seed": 0,
    "embedder.text.provider": "stub",
    "embedder.text.endpoint": "",
    "embedder.text.dim": 256,
    "embedder.text.timeout_ms": 5000,
    "embedder.text.stub_seed": 1,
    "embedder.image.provider": "stub",
    "embedder.image.endpoint": "",
    "embedder.image.dim": 256,
    "embedder.image.timeout_ms": 5000,
    "embedder.image.stub_seed": 2,
    "generator.kind": "stub",
    "generator.endpoint": "",
    "generator.timeout_ms": 10000,
    "generator.max_output_units": 256,
    "retrieval.k_text": DEFAULT_K_TEXT,
    "retrieval.k_image": DEFAULT_K_IMAGE,
    "retrieval.history_turns": DEFAULT_HISTORY_TURNS,
    "retrieval.budget_units": DEFAULT_BUDGET_UNITS,
    "hnsw.m": 16,
    "hnsw.ef_construction": 200,
    "hnsw.ef_search": 64,
    "hnsw.seed": 0,
    "chunking.max_units": 512,
    "chunking.overlap": 64,
    "projection.path": "",
}


@dataclass
class ResolvedConfig:
    values: dict[str, object]
    sources: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def describe(self) -> list[str]:
        return [f"{key} = {self.values[key]!r}  ({self.sources.get(key, 'default')})"
                for key in sorted(self.values)]


def _flatten(obj: dict, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    for key, val in obj.items():
        dotted = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(_flatten(val, f"{dotted}."))
        else:
            out[dotted] = val
    return out


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config_file(path: str) -> dict[str, object]:
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    flat = _flatten(data)
    unknown = set(flat) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return flat


def resolve_config(
    config_path: str | None = None,
    flag_overrides: dict[str, object] | None = None,
    env: dict[str, str] | None = None,
) -> ResolvedConfig:
    """Merge defaults, config file, FOLIO_* environment variables, and CLI
    flag overrides, in increasing precedence."""
    env = os.environ if env is None else env
    values = dict(DEFAULTS)
    sources = {key: "default" for key in DEFAULTS}
    if config_path:
        for key, val in load_config_file(config_path).items():
            values[key] = val
            sources[key] = f"file:{config_path}"
    for key in DEFAULTS:
        env_name = ENV_PREFIX + key.replace(".", "_").upper()
        if env_name in env:
            values[key] = _coerce(key, env[env_name])
            sources[key] = f"env:{env_name}"
    if flag_overrides:
        for key, val in flag_overrides.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key: {key}")
            values[key] = val
            sources[key] = "flag"
    return ResolvedConfig(values=values, sources=sources)


def _embedder_from(cfg: ResolvedConfig, section: str, modality: Modality) -> EmbedderConfig:
    provider = str(cfg[f"embedder.{section}.provider"]).lower()
    kind = ProviderKind.STUB if provider == "stub" else ProviderKind.REMOTE_HTTP
    endpoint = str(cfg[f"embedder.{section}.endpoint"]) or None
    return EmbedderConfig(
        provider_kind=kind,
        endpoint=endpoint,
        dim=int(cfg[f"embedder.{section}.dim"]),
        modality=modality,
        timeout_ms=int(cfg[f"embedder.{section}.timeout_ms"]),
        stub_seed=int(cfg[f"embedder.{section}.stub_seed"]),
    )


def text_embedder_config(cfg: ResolvedConfig) -> EmbedderConfig:
    return _embedder_from(cfg, "text", Modality.TEXT)


def image_embedder_config(cfg: ResolvedConfig) -> EmbedderConfig:
    return _embedder_from(cfg, "image", Modality.IMAGE)


def generator_config(cfg: ResolvedConfig) -> GenerationBackendConfig:
    kind = BackendKind.STUB if str(cfg["generator.kind"]).lower() == "stub" else BackendKind.REMOTE_HTTP
    return GenerationBackendConfig(
        kind=kind,
        endpoint=str(cfg["generator.endpoint"]) or None,
        timeout_ms=int(cfg["generator.timeout_ms"]),
        max_output_units=int(cfg["generator.max_output_units"]),
    )


def hnsw_config(cfg: ResolvedConfig) -> HnswConfig:
    return HnswConfig(
        M=int(cfg["hnsw.m"]),
        ef_construction=int(cfg["hnsw.ef_construction"]),
        ef_search=int(cfg["hnsw.ef_search"]),
        seed=int(cfg["hnsw.seed"]),
    )


def projection_model(cfg: ResolvedConfig) -> ProjectionModel | None:
    path = str(cfg["projection.path"])
    return load_model(path) if path else None

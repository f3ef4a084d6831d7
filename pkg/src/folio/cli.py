"""Command-line front door: ingest, reindex, one-shot query, projection
training, eval, and serving.

stdout carries machine-readable JSON only; diagnostics go to stderr. Exit
codes: 0 success, 1 validation/runtime error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
import time

import click
import numpy as np

from . import align, config, corpus, evaluation
from .errors import FolioError
from .rag import RagEngine


def _build_engine(resolved: config.ResolvedConfig) -> RagEngine:
    return RagEngine(
        text_embedder=config.text_embedder_config(resolved),
        image_embedder=config.image_embedder_config(resolved),
        projection=config.projection_model(resolved),
        k_text=int(resolved["retrieval.k_text"]),
        k_image=int(resolved["retrieval.k_image"]),
        history_turns=int(resolved["retrieval.history_turns"]),
        budget_units=int(resolved["retrieval.budget_units"]),
        chunk_max_units=int(resolved["chunking.max_units"]),
        chunk_overlap=int(resolved["chunking.overlap"]),
    )


def _load_engine(ctx_obj: dict) -> tuple[RagEngine, config.ResolvedConfig]:
    resolved = ctx_obj["resolved"]
    engine = _build_engine(resolved)
    engine.load_state(str(resolved["data_dir"]))
    return engine, resolved


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config_path, data_dir, seed, verbose):
    """Multimodal RAG engine for text-heavy documents."""
    overrides = {}
    if data_dir is not None:
        overrides["data_dir"] = data_dir
    if seed is not None:
        overrides["seed"] = seed
    try:
        resolved = config.resolve_config(config_path, overrides)
    except (ValueError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    if verbose:
        for line in resolved.describe():
            click.echo(line, err=True)
    ctx.obj = {"resolved": resolved, "verbose": verbose}


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def ingest(ctx, manifest):
    """Ingest a bundle manifest into the corpus and index."""
    engine, resolved = _load_engine(ctx.obj)
    try:
        bundle = corpus.load_manifest(manifest)
        records = engine.ingest(bundle)
        engine.save_state(str(resolved["data_dir"]))
    except FolioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(json.dumps({"doc_id": bundle.doc_id, "pages": len(records)}))


@main.command()
@click.pass_context
def reindex(ctx):
    """Rebuild the approximate-search graph over the current index."""
    engine, resolved = _load_engine(ctx.obj)
    if len(engine.index) == 0:
        click.echo(json.dumps({"records": 0, "built": False}))
        return
    started = time.monotonic()
    engine.index.build_hnsw(config.hnsw_config(resolved))
    click.echo(json.dumps({
        "records": len(engine.index),
        "built": True,
        "seconds": round(time.monotonic() - started, 3),
    }))


@main.command()
@click.argument("text")
@click.option("-k", "top_k", type=int, default=5, show_default=True)
@click.pass_context
def query(ctx, text, top_k):
    """Print top-k retrieval hits as JSON lines."""
    engine, _ = _load_engine(ctx.obj)
    try:
        result = engine.retrieve(text, k_text=top_k, k_image=top_k)
    except FolioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    for hit in result.text_hits + result.image_hits:
        click.echo(json.dumps({
            "id": hit.id,
            "score": hit.score,
            "kind": hit.kind.name.lower(),
            "doc_id": hit.payload.doc_id,
            "page_no": hit.payload.page_no,
            "chunk_id": hit.payload.chunk_id,
            "label": hit.payload.label,
            "text": hit.payload.text,
        }))


@main.command("train-projection")
@click.argument("pairs_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["least_squares", "infonce"]), default="infonce", show_default=True)
@click.option("--epochs", type=int, default=25, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--rank", type=int, default=8, show_default=True)
@click.option("--batch-size", type=int, default=0, show_default=True)
@click.option("--tau", type=float, default=0.07, show_default=True)
@click.option("--out-model", type=click.Path(dir_okay=False), default="projection.frwp", show_default=True)
@click.option("--out-curve", type=click.Path(dir_okay=False), default="curve.csv", show_default=True)
@click.pass_context
def train_projection(ctx, pairs_file, mode, epochs, lr, rank, batch_size, tau, out_model, out_curve):
    """Train the image-to-text projection on JSONL pairs
    {"image_vec": [...], "text_vec": [...]} and write the model + curve CSV."""
    resolved = ctx.obj["resolved"]
    pairs = []
    with open(pairs_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append((np.asarray(obj["image_vec"], dtype=np.float64),
                              np.asarray(obj["text_vec"], dtype=np.float64)))
            except (ValueError, KeyError) as exc:
                click.echo(f"pairs line {lineno}: {exc}", err=True)
                sys.exit(1)
    if not pairs:
        click.echo("no training pairs found", err=True)
        sys.exit(1)
    d_img, d_txt = pairs[0][0].shape[0], pairs[0][1].shape[0]
    seed = int(resolved["seed"])
    model0 = align.ProjectionModel.initialize(d_img=d_img, d_txt=d_txt, r=rank, seed=seed)
    cfg = align.TrainConfig(
        mode=align.TrainMode(mode), lr=lr, epochs=epochs,
        batch_size=batch_size, tau=tau, seed=seed,
    )
    try:
        model, log = align.train_projection(pairs, cfg, model0)
    except FolioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    align.save_model(model, out_model)
    evaluation.emit_curve(log, out_curve)
    train_rows = [r for r in log.rows if r.split == "train"]
    click.echo(json.dumps({
        "model": out_model,
        "curve": out_curve,
        "pairs": len(pairs),
        "epochs": epochs,
        "final_loss": train_rows[-1].loss,
        "final_accuracy": train_rows[-1].retrieval_accuracy,
    }))


@main.command("eval")
@click.argument("benchmark", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["retrieval", "qa"]), default="retrieval", show_default=True)
@click.option("--ks", default="1,3,5", show_default=True, help="comma-separated k values for hit@k")
@click.pass_context
def eval_cmd(ctx, benchmark, mode, ks):
    """Run the benchmark and print the report JSON."""
    engine, resolved = _load_engine(ctx.obj)
    with open(benchmark, encoding="utf-8") as fh:
        try:
            items = evaluation.load_benchmark(fh.read())
        except ValueError as exc:
            click.echo(str(exc), err=True)
            sys.exit(1)
    try:
        if mode == "retrieval":
            k_values = [int(k) for k in ks.split(",") if k.strip()]
            report = evaluation.run_retrieval_eval(engine, items, k_values)
        else:
            report = evaluation.run_qa_eval(engine, items, config.generator_config(resolved))
    except FolioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(json.dumps(report.to_dict()))


@main.command()
@click.pass_context
def serve(ctx):
    """Run the HTTP service until interrupted."""
    import uvicorn

    from .server import create_app

    engine, resolved = _load_engine(ctx.obj)
    app = create_app(engine, config.generator_config(resolved), data_dir=str(resolved["data_dir"]))
    host, _, port = str(resolved["bind_addr"]).rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":
    main()

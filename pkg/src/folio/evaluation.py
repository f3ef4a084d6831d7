"""Benchmark harness: retrieval hit@k, QA exact-match / token-F1, and
training-curve CSV emission.

No single number is reported as "the" accuracy; retrieval and QA metrics are
kept separate.
"""

from __future__ import annotations

import csv
import json
import string
from collections import Counter
from dataclasses import dataclass, field

from .align import TrainLog
from .errors import EmptyBenchmark, InvalidTrainLog
from .rag import GenerationBackendConfig, RagEngine

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class BenchmarkItem:
    question: str
    gold_answer: str
    gold_doc_id: str
    gold_page_no: int

    def __post_init__(self):
        if not self.question or not self.gold_answer or not self.gold_doc_id:
            raise ValueError("benchmark item fields must be nonempty")
        if self.gold_page_no < 1:
            raise ValueError("gold_page_no must be positive")


@dataclass
class EvalReport:
    n_items: int
    n_invalid: int = 0
    hit_at: dict[int, float] = field(default_factory=dict)
    exact_match: float | None = None
    token_f1: float | None = None
    per_item: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_invalid": self.n_invalid,
            "hit_at": {str(k): v for k, v in sorted(self.hit_at.items())},
            "exact_match": self.exact_match,
            "token_f1": self.token_f1,
            "per_item": self.per_item,
        }


def load_benchmark(text: str) -> list[BenchmarkItem]:
    """Parse benchmark JSONL: one item per nonempty line."""
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            items.append(
                BenchmarkItem(
                    question=obj["question"],
                    gold_answer=obj["gold_answer"],
                    gold_doc_id=obj["gold_doc_id"],
                    gold_page_no=obj["gold_page_no"],
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"benchmark line {lineno}: {exc}") from exc
    return items


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def token_f1(predicted: str, gold: str) -> float:
    """Harmonic mean of token precision and recall over normalized answers,
    with multiset token overlap."""
    pred_tokens = normalize_answer(predicted).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def exact_match(predicted: str, gold: str) -> float:
    return 1.0 if normalize_answer(predicted) == normalize_answer(gold) else 0.0


def _split_valid(engine: RagEngine, items: list[BenchmarkItem]):
    if not items:
        raise EmptyBenchmark("no benchmark items")
    valid = []
    invalid = []
    for item in items:
        if engine.has_page(item.gold_doc_id, item.gold_page_no):
            valid.append(item)
        else:
            invalid.append(item)
    return valid, invalid


def run_retrieval_eval(engine: RagEngine, items: list[BenchmarkItem], ks: list[int]) -> EvalReport:
    """hit@k = fraction of valid items whose gold (doc_id, page_no) appears
    among the top-k text hits or top-k image hits."""
    if not ks or any(k < 1 for k in ks):
        raise ValueError("ks must be a nonempty list of positive ints")
    valid, invalid = _split_valid(engine, items)
    k_max = max(ks)
    hits_at = {k: 0 for k in ks}
    per_item = [
        {"question": item.question, "gold_doc_id": item.gold_doc_id,
         "gold_page_no": item.gold_page_no, "valid": False}
        for item in invalid
    ]
    for item in valid:
        result = engine.retrieve(item.question, k_text=k_max, k_image=k_max)
        gold = (item.gold_doc_id, item.gold_page_no)
        # Rank of the first gold-page hit in each list (1-based), or None.
        def first_rank(hits):
            for rank, hit in enumerate(hits, start=1):
                if (hit.payload.doc_id, hit.payload.page_no) == gold:
                    return rank
            return None

        text_rank = first_rank(result.text_hits)
        image_rank = first_rank(result.image_hits)
        best = min((r for r in (text_rank, image_rank) if r is not None), default=None)
        for k in ks:
            if best is not None and best <= k:
                hits_at[k] += 1
        per_item.append(
            {"question": item.question, "gold_doc_id": item.gold_doc_id,
             "gold_page_no": item.gold_page_no, "valid": True, "best_rank": best}
        )
    n = len(valid)
    report = EvalReport(
        n_items=n,
        n_invalid=len(invalid),
        hit_at={k: (hits_at[k] / n if n else 0.0) for k in ks},
        per_item=per_item,
    )
    return report


def run_qa_eval(engine: RagEngine, items: list[BenchmarkItem], backend: GenerationBackendConfig) -> EvalReport:
    """Answer each question in a fresh session and score exact match and
    token F1 against the gold answer."""
    valid, invalid = _split_valid(engine, items)
    per_item = [
        {"question": item.question, "gold_doc_id": item.gold_doc_id,
         "gold_page_no": item.gold_page_no, "valid": False}
        for item in invalid
    ]
    em_total = 0.0
    f1_total = 0.0
    for item in valid:
        session = engine.create_session()
        turn = engine.chat_answer(session.session_id, item.question, backend)
        em = exact_match(turn.text, item.gold_answer)
        f1 = token_f1(turn.text, item.gold_answer)
        em_total += em
        f1_total += f1
        per_item.append(
            {"question": item.question, "predicted": turn.text, "valid": True,
             "exact_match": em, "token_f1": f1}
        )
    n = len(valid)
    return EvalReport(
        n_items=n,
        n_invalid=len(invalid),
        exact_match=(em_total / n if n else 0.0),
        token_f1=(f1_total / n if n else 0.0),
        per_item=per_item,
    )


def validate_train_log(log: TrainLog) -> None:
    """Epochs must run contiguously from 1 within every split."""
    by_split: dict[str, list[int]] = {}
    for row in log.rows:
        by_split.setdefault(row.split, []).append(row.epoch)
    if not by_split:
        raise InvalidTrainLog("log has no rows")
    for split, epochs in by_split.items():
        if epochs != list(range(1, len(epochs) + 1)):
            raise InvalidTrainLog(f"split {split!r} epochs not contiguous from 1: {epochs}")


def emit_curve(log: TrainLog, path: str) -> None:
    """Write the per-epoch training curve as CSV: epoch,split,loss,accuracy."""
    validate_train_log(log)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy"])
        for row in log.rows:
            writer.writerow([row.epoch, row.split, row.loss, row.retrieval_accuracy])

"""Entity-level strict-match micro F1 and the throughput benchmark.

A predicted span is a true positive iff (start, end, type) all match a
gold span of the same sentence. Throughput times the full serving path:
word-to-id encoding, span enumeration and packing, the forward pass, and
decoding; corpus loading and vocabulary construction are excluded.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, EntitySpan
from .errors import ShapeError
from .infer import Prediction, predict_batch
from .models import Model


@dataclass
class TypePRF:
    precision: float
    recall: float
    f1: float
    support: int  # gold span count
    predicted: int


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    per_type: dict[str, TypePRF] = field(default_factory=dict)
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "per_type": {
                name: vars(t).copy() for name, t in sorted(self.per_type.items())
            },
        }


def _prf(tp: int, pred: int, gold: int) -> tuple[float, float, float]:
    precision = tp / pred if pred else 0.0
    recall = tp / gold if gold else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


def _spans_of(item) -> list[EntitySpan]:
    if isinstance(item, Prediction):
        return list(item.entities)
    return [EntitySpan(*span) for span in item]


def micro_f1(
    gold: Sequence[Sequence[EntitySpan]],
    predicted: Sequence[Prediction] | Sequence[Sequence[EntitySpan]],
) -> PRF:
    """Micro-averaged strict F1 over aligned sentence lists, with a
    per-type breakdown."""
    if len(gold) != len(predicted):
        raise ShapeError(
            f"gold has {len(gold)} sentences, predictions {len(predicted)}"
        )
    tp = fp = fn = 0
    by_type: dict[str, list[int]] = {}
    for gold_spans, pred_item in zip(gold, predicted):
        gold_set = {EntitySpan(*s) for s in gold_spans}
        pred_set = set(_spans_of(pred_item))
        for span in gold_set | pred_set:
            counters = by_type.setdefault(span.entity_type, [0, 0, 0])  # tp, pred, gold
            hit = span in gold_set and span in pred_set
            counters[0] += int(hit)
            counters[1] += int(span in pred_set)
            counters[2] += int(span in gold_set)
        hits = len(gold_set & pred_set)
        tp += hits
        fp += len(pred_set) - hits
        fn += len(gold_set) - hits
    precision, recall, f1 = _prf(tp, tp + fp, tp + fn)
    per_type = {
        name: TypePRF(*_prf(c[0], c[1], c[2]), support=c[2], predicted=c[1])
        for name, c in by_type.items()
    }
    return PRF(precision, recall, f1, per_type, tp, fp, fn)


def gold_entities(corpus: Corpus) -> list[list[EntitySpan]]:
    return [sentence.entities for sentence in corpus]


# -- throughput -------------------------------------------------------------------


@dataclass
class ThroughputReport:
    samples_per_second: float
    per_run: list[float]
    batch_size: int
    warmup_batches: int
    measured_batches: int
    num_sentences: int
    hardware: str
    strategy: str
    mean_retained_fraction: float = 1.0

    def to_dict(self) -> dict:
        return vars(self).copy()


def benchmark_throughput(
    model: Model,
    corpus: Corpus,
    batch_size: int = 8,
    warmup: int = 2,
    repeats: int = 3,
    tau: float | None = None,
) -> ThroughputReport:
    """Average samples/s over `repeats` timed passes after `warmup` batches.

    Input order is deterministic; each timed pass runs the complete
    inference path over the whole corpus.
    """
    if not corpus:
        raise ShapeError("benchmark corpus is empty")
    warm = list(corpus[: warmup * batch_size])
    if warm:
        predict_batch(model, warm, tau=tau, batch_size=batch_size)
    per_run = []
    retained = []
    for _ in range(repeats):
        start = time.perf_counter()
        predictions = predict_batch(model, corpus, tau=tau, batch_size=batch_size)
        elapsed = time.perf_counter() - start
        per_run.append(len(corpus) / elapsed)
        retained.append(float(np.mean([p.retained_fraction for p in predictions])))
    return ThroughputReport(
        samples_per_second=float(np.mean(per_run)),
        per_run=per_run,
        batch_size=batch_size,
        warmup_batches=warmup,
        measured_batches=int(np.ceil(len(corpus) / batch_size)) * repeats,
        num_sentences=len(corpus),
        hardware=f"{platform.machine()} / {platform.processor() or 'unknown cpu'}",
        strategy=model.config.strategy,
        mean_retained_fraction=float(np.mean(retained)),
    )


def format_table(rows: list[dict], columns: list[str]) -> str:
    """Aligned-column text table for report files and CLI output."""
    def fmt(value):
        if isinstance(value, float):
            return f"{value:.4g}"
        return str(value)

    cells = [[fmt(row.get(col, "")) for col in columns] for row in rows]
    widths = [
        max(len(col), *(len(row[k]) for row in cells)) if cells else len(col)
        for k, col in enumerate(columns)
    ]
    lines = [
        "  ".join(col.ljust(w) for col, w in zip(columns, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)

"""Turning logits into entity predictions.

Span decoding resolves conflicts with confidence-greedy non-maximum
suppression (ties: earlier start, then shorter span), so predictions are
always pairwise non-overlapping and deterministic. BIO decoding applies
the lenient repair rule via the corpus codec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .corpus import EntitySpan, LabelSet, Sentence, tags_to_spans
from .errors import ShapeError
from .models import Model, SpanForward, batch_inputs, forward_spans, forward_token
from .spans import SpanCandidate, span_min_probs

PREDICT_BATCH_SIZE = 32


@dataclass
class Prediction:
    """Non-overlapping entities with confidences and the filter statistic."""

    entities: list[EntitySpan] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)
    retained_fraction: float = 1.0

    def to_json_dict(self, sentence: Sentence | None = None) -> dict:
        out = {
            "entities": [
                {
                    "start": e.start,
                    "end": e.end,
                    "type": e.entity_type,
                    "confidence": c,
                }
                for e, c in zip(self.entities, self.confidences)
            ],
            "retained_fraction": self.retained_fraction,
        }
        if sentence is not None:
            out = {"words": list(sentence.words), **out}
        return out


def filter_spans(
    candidates: Sequence[SpanCandidate],
    sf_probs: np.ndarray,
    tau: float,
) -> list[SpanCandidate]:
    """Retain candidates whose minimum per-token entity probability is >= tau.
    Order is preserved."""
    probs = np.asarray(sf_probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ShapeError("sf_probs must be one probability per token")
    if not candidates:
        return []
    mins = span_min_probs(probs, candidates)
    return [c for c, m in zip(candidates, mins) if m >= tau]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode_spans(
    logits: np.ndarray | Tensor,
    candidates: Sequence[SpanCandidate],
    label_set: LabelSet,
    retained_fraction: float = 1.0,
) -> Prediction:
    """Greedy non-overlapping decoding of per-candidate logits over E."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.shape[0] != len(candidates):
        raise ShapeError(f"{data.shape[0]} logit rows vs {len(candidates)} candidates")
    if len(candidates) == 0:
        return Prediction(retained_fraction=retained_fraction)
    probs = _softmax_rows(data)
    classes = probs.argmax(axis=-1)
    order = [
        (-probs[k, classes[k]], candidates[k].i, candidates[k].j - candidates[k].i, k)
        for k in range(len(candidates))
        if classes[k] != 0
    ]
    order.sort()
    taken: list[tuple[int, int]] = []
    picked: list[tuple[SpanCandidate, int, float]] = []
    for neg_conf, _, _, k in order:
        cand = candidates[k]
        if any(cand.i <= e and s <= cand.j for s, e in taken):
            continue
        taken.append((cand.i, cand.j))
        picked.append((cand, int(classes[k]), -neg_conf))
    picked.sort(key=lambda item: item[0])
    return Prediction(
        entities=[
            EntitySpan(c.i, c.j, label_set.entity_types[cls]) for c, cls, _ in picked
        ],
        confidences=[conf for _, _, conf in picked],
        retained_fraction=retained_fraction,
    )


def decode_bio(logits: np.ndarray | Tensor, label_set: LabelSet) -> Prediction:
    """Per-token argmax, lenient BIO repair, per-entity mean confidence."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.size == 0:
        return Prediction()
    probs = _softmax_rows(data)
    picks = probs.argmax(axis=-1)
    tags = [label_set.bio_labels[k] for k in picks]
    token_conf = probs[np.arange(len(tags)), picks]
    entities = tags_to_spans(tags)
    confidences = [
        float(token_conf[e.start : e.end + 1].mean()) for e in entities
    ]
    return Prediction(entities=entities, confidences=confidences)


def _span_predictions(
    fwd: SpanForward, label_set: LabelSet
) -> list[Prediction]:
    out = []
    for row, cands in enumerate(fwd.candidates):
        logits = fwd.logits.data[row, : len(cands)]
        total = fwd.enumerated[row] if fwd.enumerated else len(cands)
        fraction = len(cands) / total if total else 1.0
        out.append(decode_spans(logits, cands, label_set, retained_fraction=fraction))
    return out


def predict_batch(
    model: Model,
    sentences: Sequence[Sentence],
    tau: float | None = None,
    batch_size: int = PREDICT_BATCH_SIZE,
) -> list[Prediction]:
    """Strategy-dispatched inference over sentences, in input order."""
    predictions: list[Prediction] = []
    with no_grad():
        for lo in range(0, len(sentences), batch_size):
            chunk = list(sentences[lo : lo + batch_size])
            ids, mask = batch_inputs(model.vocab, chunk)
            if model.config.strategy == "token":
                logits = forward_token(model.params, model.config, ids, mask)
                for row, sentence in enumerate(chunk):
                    predictions.append(
                        decode_bio(
                            logits.data[row, : len(sentence)], model.config.label_set
                        )
                    )
            else:
                fwd = forward_spans(
                    model.params, model.config, ids, mask, apply_filter=True, tau=tau
                )
                predictions.extend(_span_predictions(fwd, model.config.label_set))
    return predictions


def predict(model: Model, sentence: Sentence, tau: float | None = None) -> Prediction:
    return predict_batch(model, [sentence], tau=tau)[0]


def write_jsonl(
    path, sentences: Sequence[Sentence], predictions: Sequence[Prediction]
) -> None:
    """One JSON object per sentence: words, entities, retained_fraction."""
    with open(path, "w", encoding="utf-8") as handle:
        for sentence, prediction in zip(sentences, predictions):
            handle.write(json.dumps(prediction.to_json_dict(sentence)) + "\n")


def sweep_tau(
    model: Model, corpus: Sequence[Sentence], taus: Iterable[float]
) -> list[dict]:
    """(tau, retention, gold-span survival, F1) rows over a threshold sweep.

    Candidates are decoded once without filtering; packing invariance makes
    per-tau subset decoding equivalent to rerunning the filtered pipeline.
    """
    from .evaluate import micro_f1

    if model.config.strategy != "sf_spandec":
        raise ShapeError("tau sweep requires an sf_spandec model")
    per_sentence = []
    with no_grad():
        for lo in range(0, len(corpus), PREDICT_BATCH_SIZE):
            chunk = list(corpus[lo : lo + PREDICT_BATCH_SIZE])
            ids, mask = batch_inputs(model.vocab, chunk)
            fwd = forward_spans(
                model.params, model.config, ids, mask, apply_filter=False
            )
            for row, sentence in enumerate(chunk):
                cands = fwd.candidates[row]
                per_sentence.append(
                    {
                        "gold": sentence.entities,
                        "candidates": cands,
                        "logits": fwd.logits.data[row, : len(cands)].copy(),
                        "mins": span_min_probs(
                            fwd.sf_probs.data[row, : len(sentence)], cands
                        )
                        if cands
                        else np.zeros(0),
                        "gold_mins": span_min_probs(
                            fwd.sf_probs.data[row, : len(sentence)],
                            [SpanCandidate(e.start, e.end) for e in sentence.entities],
                        )
                        if sentence.entities
                        else np.zeros(0),
                    }
                )
    rows = []
    gold_sets = [entry["gold"] for entry in per_sentence]
    total_gold = sum(len(g) for g in gold_sets)
    for tau in taus:
        enumerated = retained = survived = 0
        predictions = []
        for entry in per_sentence:
            keep = entry["mins"] >= tau
            enumerated += len(entry["candidates"])
            retained += int(keep.sum())
            survived += int((entry["gold_mins"] >= tau).sum())
            kept_cands = [c for c, k in zip(entry["candidates"], keep) if k]
            predictions.append(
                decode_spans(
                    entry["logits"][keep],
                    kept_cands,
                    model.config.label_set,
                    retained_fraction=(
                        len(kept_cands) / len(entry["candidates"])
                        if entry["candidates"]
                        else 1.0
                    ),
                )
            )
        rows.append(
            {
                "tau": float(tau),
                "retention": retained / enumerated if enumerated else 1.0,
                "gold_survival": survived / total_gold if total_gold else 1.0,
                "f1": micro_f1(gold_sets, predictions).f1,
            }
        )
    return rows

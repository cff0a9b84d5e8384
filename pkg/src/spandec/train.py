"""Loss construction and the optimization loop.

Optimizer: decoupled-weight-decay Adam with per-step global-norm
clipping, a one-cycle schedule (linear warmup, cosine decay), and a
higher learning rate on newly initialized parameter groups (markers,
decoder, heads). Deterministic given the seed in the single-threaded
configuration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Corpus, EntitySpan, LabelSet, Sentence, build_vocab
from .errors import ConfigError, TrainingDiverged
from .models import (
    Model,
    ModelConfig,
    SpanForward,
    batch_inputs,
    forward_spans,
    forward_token,
    init_model_params,
)
from .spans import SpanCandidate

# parameter groups trained at the boosted learning rate
NEW_PARAM_PREFIXES = ("marker.", "dec.", "spanhead.", "tokenhead.", "sfhead.")

_BCE_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    base_lr: float = 5e-5
    new_param_lr_multiplier: float = 10.0
    warmup_ratio: float = 0.03
    batch_size: int = 64
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.01
    sf_loss_weight: float = 1.0
    o_class_weight: float = 1.0  # <1 down-weights O candidates in span_loss
    seed: int = 0
    min_word_freq: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("base_lr", "new_param_lr_multiplier", "batch_size",
                     "grad_clip_norm", "weight_decay"):
            if getattr(self, name) <= 0 and name != "weight_decay":
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.warmup_ratio < 1.0):
            raise ConfigError("warmup_ratio must lie in (0, 1)")
        if self.sf_loss_weight < 0:
            raise ConfigError("sf_loss_weight must be >= 0")
        if not (0.0 < self.o_class_weight <= 1.0):
            raise ConfigError("o_class_weight must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "base_lr": self.base_lr,
            "new_param_lr_multiplier": self.new_param_lr_multiplier,
            "warmup_ratio": self.warmup_ratio,
            "batch_size": self.batch_size,
            "grad_clip_norm": self.grad_clip_norm,
            "weight_decay": self.weight_decay,
            "sf_loss_weight": self.sf_loss_weight,
            "o_class_weight": self.o_class_weight,
            "seed": self.seed,
            "min_word_freq": self.min_word_freq,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "TrainConfig":
        return cls(**dict(raw))


def desk_train_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: from-scratch training of small models on the
    synthetic corpus (paper-scale defaults are the dataclass defaults)."""
    base = dict(epochs=60, base_lr=1e-3, batch_size=32, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


# -- losses ----------------------------------------------------------------------


def _one_hot(indices: np.ndarray, depth: int) -> np.ndarray:
    flat = np.asarray(indices).reshape(-1)
    out = np.zeros((flat.size, depth))
    out[np.arange(flat.size), flat] = 1.0
    return out.reshape(*np.asarray(indices).shape, depth)


def span_labels(
    candidates: Sequence[SpanCandidate],
    gold_spans: Sequence[EntitySpan],
    label_set: LabelSet,
) -> np.ndarray:
    """Per-candidate class index: the gold type on an exact match, else O."""
    gold = {(s.start, s.end): label_set.type_index(s.entity_type) for s in gold_spans}
    return np.array([gold.get((c.i, c.j), 0) for c in candidates], dtype=np.int64)


def span_loss(
    logits: Tensor,
    candidates: Sequence[SpanCandidate],
    gold_spans: Sequence[EntitySpan],
    label_set: LabelSet,
    o_class_weight: float = 1.0,
) -> Tensor:
    """Weighted mean cross-entropy over one sentence's candidates.

    With the default weight of 1 this is the plain mean; smaller values
    down-weight the (heavily dominant) O candidates.
    """
    if len(candidates) == 0:
        return Tensor(0.0)
    labels = span_labels(candidates, gold_spans, label_set)
    logp = ad.log_softmax(logits, axis=-1)
    picked = (logp * _one_hot(labels, label_set.num_types)).sum(axis=-1)
    weights = np.where(labels == 0, o_class_weight, 1.0)
    return -(picked * weights).sum() / weights.sum()


def span_loss_batched(
    fwd: SpanForward,
    gold: Sequence[Sequence[EntitySpan]],
    label_set: LabelSet,
    o_class_weight: float = 1.0,
) -> Tensor:
    """Mean of per-sentence span losses over the batch."""
    batch, max_pairs = fwd.pair_valid.shape
    labels = np.zeros((batch, max_pairs), dtype=np.int64)
    for b, (cands, spans) in enumerate(zip(fwd.candidates, gold)):
        labels[b, : len(cands)] = span_labels(cands, spans, label_set)
    logp = ad.log_softmax(fwd.logits, axis=-1)
    picked = (logp * _one_hot(labels, label_set.num_types)).sum(axis=-1)
    weights = np.where(labels == 0, o_class_weight, 1.0) * fwd.pair_valid
    counts = np.maximum(weights.sum(axis=1), 1e-12)
    per_sentence = (picked * weights).sum(axis=1) * Tensor(1.0 / counts)
    nonempty = max(int((fwd.pair_valid.sum(axis=1) > 0).sum()), 1)
    return -per_sentence.sum() / nonempty


def bio_loss(
    logits: Tensor, tag_ids: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """Mean cross-entropy over unpadded tokens; accepts (S, C) or (B, S, C)."""
    if logits.ndim == 2:
        logits = logits.reshape(1, *logits.shape)
        tag_ids = np.asarray(tag_ids)[None, :]
    if mask is None:
        mask = np.ones(tag_ids.shape, dtype=bool)
    depth = logits.shape[-1]
    logp = ad.log_softmax(logits, axis=-1)
    picked = (logp * _one_hot(np.where(mask, tag_ids, 0), depth)).sum(axis=-1)
    weight = mask.astype(float)
    return -(picked * weight).sum() / max(weight.sum(), 1.0)


def sf_loss(
    probs: Tensor, entity_targets: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """Mean binary cross-entropy of per-token entity probabilities.

    Targets are 1 on tokens inside any gold entity. Probabilities are
    clamped away from {0, 1} so a saturated head yields ~0 loss instead of
    log(0).
    """
    targets = np.asarray(entity_targets, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
        targets = targets[None, :]
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    p = ad.clip(probs, _BCE_EPS, 1.0 - _BCE_EPS)
    per_token = targets * ad.log(p) + (1.0 - targets) * ad.log(1.0 - p)
    weight = mask.astype(float)
    return -(per_token * weight).sum() / max(weight.sum(), 1.0)


def bio_tag_ids(
    sentences: Sequence[Sentence], label_set: LabelSet, width: int
) -> np.ndarray:
    ids = np.zeros((len(sentences), width), dtype=np.int64)
    for b, sentence in enumerate(sentences):
        for t, tag in enumerate(sentence.tags):
            ids[b, t] = label_set.bio_index(tag)
    return ids


def total_loss(
    config: ModelConfig,
    outputs,
    sentences: Sequence[Sentence],
    mask: np.ndarray,
    sf_loss_weight: float = 1.0,
    o_class_weight: float = 1.0,
) -> tuple[Tensor, dict[str, float]]:
    """Strategy dispatch; returns the scalar loss and its components.

    No filtering is applied during training: sf_spandec decodes every
    candidate and adds the weighted SF term.
    """
    label_set = config.label_set
    if config.strategy == "token":
        tags = bio_tag_ids(sentences, label_set, mask.shape[1])
        loss = bio_loss(outputs, tags, mask)
        return loss, {"bio": loss.item()}
    gold = [s.entities for s in sentences]
    loss = span_loss_batched(outputs, gold, label_set, o_class_weight)
    components = {"span": loss.item()}
    if config.strategy == "sf_spandec":
        targets = np.zeros(mask.shape)
        for b, sentence in enumerate(sentences):
            for t, tag in enumerate(sentence.tags):
                targets[b, t] = 0.0 if tag == "O" else 1.0
        sf = sf_loss(outputs.sf_probs, targets, mask)
        components["sf"] = sf.item()
        loss = loss + sf_loss_weight * sf
    components["total"] = loss.item()
    return loss, components


# -- optimizer -------------------------------------------------------------------


def one_cycle_scale(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Learning-rate factor for 1-based `step`: linear ramp to 1.0 at the
    warmup boundary, cosine decay to 0 afterwards."""
    warmup = max(1, round(total_steps * warmup_ratio))
    if step <= warmup:
        return step / warmup
    if total_steps <= warmup:
        return 1.0
    progress = (step - warmup) / (total_steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm.
    Returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    Weight decay applies to matrices only (ndim >= 2); biases, norm
    parameters, and marker vectors are exempt, the usual convention.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float,
        new_param_lr_multiplier: float = 10.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.lr = {
            name: base_lr
            * (new_param_lr_multiplier if name.startswith(NEW_PARAM_PREFIXES) else 1.0)
            for name in params
        }
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, tensor in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            lr = self.lr[name] * lr_scale
            if self.weight_decay and tensor.data.ndim >= 2:
                tensor.data -= lr * self.weight_decay * tensor.data
            tensor.data -= lr * update


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    dev_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = 0.0
    wall_clock_seconds: float = 0.0
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "dev_f1": self.dev_f1,
            "best_epoch": self.best_epoch,
            "best_dev_f1": self.best_dev_f1,
            "wall_clock_seconds": self.wall_clock_seconds,
            "checkpoint_path": self.checkpoint_path,
        }


def _forward_for_training(params, config: ModelConfig, ids, mask):
    if config.strategy == "token":
        return forward_token(params, config, ids, mask)
    return forward_spans(params, config, ids, mask, apply_filter=False)


def train_step(
    model: Model, optimizer: AdamW, sentences: Sequence[Sentence],
    lr_scale: float, clip_norm: float, sf_loss_weight: float,
    o_class_weight: float = 1.0,
) -> float:
    """One optimization step over a list of sentences; returns the loss."""
    ids, mask = batch_inputs(model.vocab, sentences)
    outputs = _forward_for_training(model.params, model.config, ids, mask)
    loss, _ = total_loss(
        model.config, outputs, sentences, mask, sf_loss_weight, o_class_weight
    )
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at step {optimizer.step_count + 1}")
    ad.zero_grads(model.params)
    loss.backward()
    grads = {
        name: t.grad for name, t in model.params.items() if t.grad is not None
    }
    clip_global_norm(grads, clip_norm)
    optimizer.step(grads, lr_scale)
    return value


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    checkpoint_path: str | Path | None = None,
) -> tuple[TrainReport, Model]:
    """Fit a model; returns the report and the best-dev-F1 model.

    The vocabulary is built from the train split only. Divergence
    (non-finite loss) aborts with TrainingDiverged.
    """
    from . import checkpoint as ckpt
    from .evaluate import micro_f1
    from .infer import predict_batch

    if not train_corpus or not dev_corpus:
        raise ConfigError("train and dev corpora must be non-empty")
    started = time.perf_counter()
    vocab = build_vocab(train_corpus, train_config.min_word_freq)
    config = model_config.with_vocab_size(len(vocab))
    longest = max(len(s) for s in list(train_corpus) + list(dev_corpus))
    if longest > config.encoder.max_positions:
        raise ConfigError(
            f"max_positions {config.encoder.max_positions} < longest sentence {longest}"
        )
    params = init_model_params(config, train_config.seed)
    model = Model(config, params, vocab)
    optimizer = AdamW(
        params,
        train_config.base_lr,
        train_config.new_param_lr_multiplier,
        weight_decay=train_config.weight_decay,
    )
    order_rng = np.random.default_rng(train_config.seed + 1)
    steps_per_epoch = math.ceil(len(train_corpus) / train_config.batch_size)
    total_steps = max(1, train_config.epochs * steps_per_epoch)

    report = TrainReport()
    best_params: dict[str, np.ndarray] = {k: t.data.copy() for k, t in params.items()}
    step = 0
    for epoch in range(train_config.epochs):
        order = order_rng.permutation(len(train_corpus))
        epoch_losses = []
        for lo in range(0, len(order), train_config.batch_size):
            batch = [train_corpus[i] for i in order[lo : lo + train_config.batch_size]]
            step += 1
            scale = one_cycle_scale(step, total_steps, train_config.warmup_ratio)
            epoch_losses.append(
                train_step(
                    model,
                    optimizer,
                    batch,
                    scale,
                    train_config.grad_clip_norm,
                    train_config.sf_loss_weight,
                    train_config.o_class_weight,
                )
            )
        report.epoch_losses.append(float(np.mean(epoch_losses)))
        predictions = predict_batch(model, dev_corpus)
        f1 = micro_f1([s.entities for s in dev_corpus], predictions).f1
        report.dev_f1.append(f1)
        if f1 > report.best_dev_f1 or report.best_epoch < 0:
            report.best_dev_f1 = f1
            report.best_epoch = epoch
            best_params = {k: t.data.copy() for k, t in params.items()}

    for name, tensor in params.items():
        tensor.data = best_params[name]
    report.wall_clock_seconds = time.perf_counter() - started
    if checkpoint_path is not None:
        ckpt.save(checkpoint_path, model)
        report.checkpoint_path = str(checkpoint_path)
    return report, model

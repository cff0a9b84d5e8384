"""The four NER strategies over shared components.

token      : full encoder -> per-token BIO classifier.
plmarker   : markers ride through every encoder block (levitated), text
             tokens never see them; pair states classified at the top.
spandec    : truncated encoder -> lightweight span decoder over packed
             marker queries.
sf_spandec : spandec plus a per-token entity-likelihood filter that
             prunes candidates before decoding (inference only).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import LabelSet, Sentence, Vocabulary
from .encoder import (
    EncoderConfig,
    HiddenStates,
    ParamDict,
    _init_encoder,
    encode,
    encode_truncated,
)
from .errors import ConfigError
from .heads import (
    DEFAULT_CHUNK_PAIRS,
    classify_pairs,
    decode_packed,
    init_decoder_params,
    init_marker_params,
    init_sf_head,
    init_span_classifier,
    init_token_head,
    run_marker_stream,
    sf_scores,
    token_classify,
)
from .spans import SpanCandidate, enumerate_spans, span_min_probs

STRATEGIES = ("token", "plmarker", "spandec", "sf_spandec")


@dataclass(frozen=True)
class ModelConfig:
    strategy: str
    encoder: EncoderConfig
    label_set: LabelSet
    encoder_blocks_used: int | None = None
    decoder_blocks: int | None = None
    sf_threshold: float = 0.5
    span_chunk_pairs: int = DEFAULT_CHUNK_PAIRS
    classifier_final_norm: bool = True
    sf_stop_gradient: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        blocks = self.encoder.num_blocks
        if self.strategy in ("token", "plmarker"):
            dec = self.decoder_blocks or 0
            if dec != 0:
                raise ConfigError(f"{self.strategy} takes no decoder blocks")
            object.__setattr__(self, "decoder_blocks", 0)
            used = blocks if self.encoder_blocks_used is None else self.encoder_blocks_used
            if used != blocks:
                raise ConfigError(
                    f"{self.strategy} uses the full encoder ({blocks} blocks)"
                )
            object.__setattr__(self, "encoder_blocks_used", blocks)
        else:
            dec = 1 if self.decoder_blocks is None else self.decoder_blocks
            if dec < 1:
                raise ConfigError(f"{self.strategy} needs >= 1 decoder block")
            object.__setattr__(self, "decoder_blocks", dec)
            # default keeps the total block budget of the plain encoder
            used = (
                blocks - dec
                if self.encoder_blocks_used is None
                else self.encoder_blocks_used
            )
            if not (1 <= used <= blocks):
                raise ConfigError(
                    f"encoder_blocks_used {used} outside [1, {blocks}]"
                )
            object.__setattr__(self, "encoder_blocks_used", used)
        if not (0.0 <= self.sf_threshold <= 1.0):
            raise ConfigError(f"sf_threshold {self.sf_threshold} outside [0, 1]")
        if self.span_chunk_pairs < 1:
            raise ConfigError("span_chunk_pairs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "encoder": self.encoder.to_dict(),
            "entity_types": list(self.label_set.entity_types),
            "encoder_blocks_used": self.encoder_blocks_used,
            "decoder_blocks": self.decoder_blocks,
            "sf_threshold": self.sf_threshold,
            "span_chunk_pairs": self.span_chunk_pairs,
            "classifier_final_norm": self.classifier_final_norm,
            "sf_stop_gradient": self.sf_stop_gradient,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelConfig":
        raw = dict(raw)
        encoder = EncoderConfig.from_dict(raw.pop("encoder"))
        label_set = LabelSet(tuple(raw.pop("entity_types")))
        return cls(encoder=encoder, label_set=label_set, **raw)

    def with_vocab_size(self, vocab_size: int) -> "ModelConfig":
        return replace(self, encoder=replace(self.encoder, vocab_size=vocab_size))


def init_model_params(config: ModelConfig, seed: int) -> ParamDict:
    """Exactly the parameter set the strategy requires, deterministic in seed.

    Span-decoder strategies allocate only the encoder blocks they use: the
    removed final layer is traded for the decoder, which is what keeps the
    parameter budget at parity with the token baseline.
    """
    rng = np.random.default_rng(seed)
    params: ParamDict = {}
    _init_encoder(params, config.encoder, rng, config.encoder_blocks_used)
    num_types = config.label_set.num_types
    if config.strategy == "token":
        init_token_head(params, config.encoder, config.label_set.num_bio, rng)
    elif config.strategy == "plmarker":
        init_marker_params(params, config.encoder, rng)
        init_span_classifier(
            params, config.encoder, num_types, rng, config.classifier_final_norm
        )
    else:
        init_marker_params(params, config.encoder, rng)
        init_decoder_params(params, config.encoder, config.decoder_blocks, rng)
        init_span_classifier(
            params, config.encoder, num_types, rng, config.classifier_final_norm
        )
        if config.strategy == "sf_spandec":
            init_sf_head(params, config.encoder, rng)
    return params


def num_parameters(params: ParamDict, prefix: str = "") -> int:
    return sum(t.size for name, t in params.items() if name.startswith(prefix))


@dataclass
class Model:
    """A strategy's config, trained or initialized weights, and vocabulary."""

    config: ModelConfig
    params: ParamDict
    vocab: Vocabulary


def batch_inputs(
    vocab: Vocabulary, sentences: Sequence[Sentence]
) -> tuple[np.ndarray, np.ndarray]:
    """Encode and pad sentences to an id matrix and validity mask."""
    if not sentences:
        return np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0), dtype=bool)
    width = max(1, max(len(s) for s in sentences))
    ids = np.full((len(sentences), width), Vocabulary.PAD, dtype=np.int64)
    mask = np.zeros((len(sentences), width), dtype=bool)
    for row, sentence in enumerate(sentences):
        encoded = vocab.encode(sentence.words)
        ids[row, : len(encoded)] = encoded
        mask[row, : len(encoded)] = True
    return ids, mask


# -- batched packing -------------------------------------------------------------


def _pack_candidates(
    candidates_per_sentence: list[list[SpanCandidate]],
    params: ParamDict,
) -> tuple[Tensor, np.ndarray]:
    """Pad per-sentence candidate lists into one packed query batch.

    Returns queries (B, 2P, H) and pair_valid bool (B, P). Padder pairs
    point at position 0; their outputs are garbage and masked everywhere
    downstream.
    """
    batch = len(candidates_per_sentence)
    max_pairs = max((len(c) for c in candidates_per_sentence), default=0)
    max_pairs = max(max_pairs, 1)
    pos_idx = np.zeros((batch, 2 * max_pairs), dtype=np.int64)
    pair_valid = np.zeros((batch, max_pairs), dtype=bool)
    for b, cands in enumerate(candidates_per_sentence):
        for k, cand in enumerate(cands):
            pos_idx[b, 2 * k] = cand.i
            pos_idx[b, 2 * k + 1] = cand.j
        pair_valid[b, : len(cands)] = True
    marker_idx = np.tile(np.array([0, 1]), max_pairs)
    hidden = params["marker.start"].shape[-1]
    marker_table = ad.concat(
        [
            params["marker.start"].reshape(1, hidden),
            params["marker.end"].reshape(1, hidden),
        ],
        axis=0,
    )
    queries = marker_table[marker_idx] + params["embed.pos"][pos_idx]
    return queries, pair_valid


@dataclass
class SpanForward:
    """Span-strategy outputs for one padded batch."""

    candidates: list[list[SpanCandidate]]  # decoded candidates per sentence
    logits: Tensor  # (B, P, |E|), rows beyond pair_valid are padding
    pair_valid: np.ndarray  # bool (B, P)
    sf_probs: Tensor | None = None  # (B, S), sf_spandec only
    enumerated: list[int] | None = None  # candidate counts before filtering

    def sentence_logits(self, row: int) -> Tensor:
        count = len(self.candidates[row])
        return self.logits[row, :count]


def _candidates_for_batch(mask: np.ndarray, max_span_len: int):
    lengths = mask.sum(axis=1)
    return [enumerate_spans(int(n), max_span_len) for n in lengths]


def forward_token(params: ParamDict, config: ModelConfig, ids, mask) -> Tensor:
    states = encode(params, config.encoder, ids, mask)
    return token_classify(states, params)


def forward_spandec(
    params: ParamDict, config: ModelConfig, ids, mask
) -> SpanForward:
    states = encode_truncated(
        params, config.encoder, ids, mask, config.encoder_blocks_used
    )
    candidates = _candidates_for_batch(mask, config.encoder.max_span_len)
    queries, pair_valid = _pack_candidates(candidates, params)
    logits = decode_packed(
        queries,
        states.states,
        mask,
        params,
        config.encoder.num_heads,
        config.decoder_blocks,
        config.span_chunk_pairs,
    )
    return SpanForward(candidates, logits, pair_valid, enumerated=[len(c) for c in candidates])


def forward_sf_spandec(
    params: ParamDict,
    config: ModelConfig,
    ids,
    mask,
    tau: float | None = None,
    apply_filter: bool = True,
) -> SpanForward:
    """Spandec with the token filter.

    With apply_filter (inference) candidates whose minimum per-token entity
    probability falls below tau are dropped before decoding. Training runs
    with apply_filter=False: all candidates are decoded and the SF head is
    supervised jointly.
    """
    if tau is None:
        tau = config.sf_threshold
    states = encode_truncated(
        params, config.encoder, ids, mask, config.encoder_blocks_used
    )
    sf = sf_scores(states, params, config.sf_stop_gradient)
    enumerated = _candidates_for_batch(mask, config.encoder.max_span_len)
    if apply_filter:
        probs = sf.data
        candidates = []
        for b, cands in enumerate(enumerated):
            if not cands:
                candidates.append([])
                continue
            mins = span_min_probs(probs[b], cands)
            candidates.append([c for c, m in zip(cands, mins) if m >= tau])
    else:
        candidates = enumerated
    queries, pair_valid = _pack_candidates(candidates, params)
    logits = decode_packed(
        queries,
        states.states,
        mask,
        params,
        config.encoder.num_heads,
        config.decoder_blocks,
        config.span_chunk_pairs,
    )
    return SpanForward(
        candidates, logits, pair_valid, sf_probs=sf, enumerated=[len(c) for c in enumerated]
    )


def forward_plmarker(
    params: ParamDict, config: ModelConfig, ids, mask
) -> SpanForward:
    """Markers processed inside every encoder block (levitated markers).

    The text stream never attends to markers, so its states are the plain
    encoder's, computed once; marker rows attend to their own pair plus
    the text keys of each block, exactly as if the pairs were appended to
    the input sequence under a directional mask.
    """
    _, block_inputs = encode_truncated(
        params,
        config.encoder,
        ids,
        mask,
        config.encoder.num_blocks,
        collect_block_inputs=True,
    )
    candidates = _candidates_for_batch(mask, config.encoder.max_span_len)
    queries, pair_valid = _pack_candidates(candidates, params)
    prefixes = [f"enc.{b}" for b in range(config.encoder.num_blocks)]
    final = run_marker_stream(
        queries,
        block_inputs,
        prefixes,
        params,
        config.encoder.num_heads,
        mask,
        config.span_chunk_pairs,
    )
    logits = classify_pairs(final, params)
    return SpanForward(candidates, logits, pair_valid, enumerated=[len(c) for c in candidates])


def forward_spans(
    params: ParamDict,
    config: ModelConfig,
    ids,
    mask,
    apply_filter: bool = True,
    tau: float | None = None,
) -> SpanForward:
    """Dispatch for the three span-producing strategies."""
    if config.strategy == "plmarker":
        return forward_plmarker(params, config, ids, mask)
    if config.strategy == "spandec":
        return forward_spandec(params, config, ids, mask)
    if config.strategy == "sf_spandec":
        return forward_sf_spandec(params, config, ids, mask, tau, apply_filter)
    raise ConfigError(f"{config.strategy} does not produce span logits")

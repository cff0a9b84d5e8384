"""Prediction heads: the span decoder (pre-norm cross-attention + shared
MLP + linear classifier), the BIO token-classification head, and the
binary span-filter (SF) head.

The span decoder processes packed marker queries in chunks of whole
pairs. Pairs never attend across pair boundaries, so chunked and
unchunked decoding agree to float accumulation order; the chunk size is
purely a memory knob.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_VALUE, Tensor
from .encoder import (
    EncoderConfig,
    HiddenStates,
    ParamDict,
    _init_block,
    feed_forward,
    trunc_normal,
)
from .errors import ShapeError
from .spans import MarkerParams, PackedSpanBatch

DEFAULT_CHUNK_PAIRS = 128


# -- parameter construction ----------------------------------------------------


def init_marker_params(params: ParamDict, cfg: EncoderConfig, rng) -> None:
    params["marker.start"] = ad.parameter(trunc_normal(rng, (cfg.hidden_dim,)))
    params["marker.end"] = ad.parameter(trunc_normal(rng, (cfg.hidden_dim,)))


def init_decoder_params(
    params: ParamDict, cfg: EncoderConfig, decoder_blocks: int, rng
) -> None:
    """Decoder blocks mirror encoder blocks (cross-attention + MLP, pre-norm)."""
    for b in range(decoder_blocks):
        _init_block(params, f"dec.{b}", cfg, rng)


def init_span_classifier(
    params: ParamDict, cfg: EncoderConfig, num_types: int, rng, final_norm: bool = True
) -> None:
    h = cfg.hidden_dim
    if final_norm:
        params["spanhead.norm.g"] = ad.parameter(np.ones(h))
        params["spanhead.norm.b"] = ad.parameter(np.zeros(h))
    params["spanhead.w"] = ad.parameter(trunc_normal(rng, (2 * h, num_types)))
    params["spanhead.b"] = ad.parameter(np.zeros(num_types))


def init_token_head(params: ParamDict, cfg: EncoderConfig, num_bio: int, rng) -> None:
    params["tokenhead.w"] = ad.parameter(trunc_normal(rng, (cfg.hidden_dim, num_bio)))
    params["tokenhead.b"] = ad.parameter(np.zeros(num_bio))


def init_sf_head(params: ParamDict, cfg: EncoderConfig, rng) -> None:
    params["sfhead.w"] = ad.parameter(trunc_normal(rng, (cfg.hidden_dim, 2)))
    params["sfhead.b"] = ad.parameter(np.zeros(2))


def marker_params_of(params: ParamDict) -> MarkerParams:
    return MarkerParams(params["marker.start"], params["marker.end"])


# -- span decoder ----------------------------------------------------------------


def pair_restricted_attention(
    normed_markers: Tensor,
    normed_text: Tensor,
    params: ParamDict,
    prefix: str,
    num_heads: int,
    text_bias: np.ndarray,
) -> Tensor:
    """Attention where marker row 2k/2k+1 sees exactly pair k plus the text.

    The pair restriction is structural: the key set per pair is its own two
    marker rows concatenated with the text keys, which realizes the packed
    cross-attention mask without materializing cross-pair scores.
    normed_markers: (B, 2P, H); normed_text: (B, S, H); text_bias additive,
    broadcastable to (B, P, heads, 2, S).
    """
    batch, rows, hidden = normed_markers.shape
    pairs = rows // 2
    seq_len = normed_text.shape[1]
    head_dim = hidden // num_heads

    def pair_heads(t: Tensor) -> Tensor:
        # (B, 2P, H) -> (B, P, heads, 2, head_dim)
        return t.reshape(batch, pairs, 2, num_heads, head_dim).transpose((0, 1, 3, 2, 4))

    def text_heads(t: Tensor) -> Tensor:
        # (B, S, H) -> (B, 1, heads, S, head_dim), broadcast over pairs
        return t.reshape(batch, 1, seq_len, num_heads, head_dim).transpose((0, 1, 3, 2, 4))

    q = pair_heads(normed_markers @ params[f"{prefix}.wq"] + params[f"{prefix}.qb"])
    k_m = pair_heads(normed_markers @ params[f"{prefix}.wk"] + params[f"{prefix}.kb"])
    v_m = pair_heads(normed_markers @ params[f"{prefix}.wv"] + params[f"{prefix}.vb"])
    k_t = text_heads(normed_text @ params[f"{prefix}.wk"] + params[f"{prefix}.kb"])
    v_t = text_heads(normed_text @ params[f"{prefix}.wv"] + params[f"{prefix}.vb"])

    scale = 1.0 / np.sqrt(head_dim)
    pair_scores = (q @ k_m.swapaxes(-1, -2)) * scale  # (B, P, A, 2, 2)
    text_scores = (q @ k_t.swapaxes(-1, -2)) * scale + text_bias  # (B, P, A, 2, S)
    weights = ad.softmax(ad.concat([pair_scores, text_scores], axis=-1), axis=-1)
    context = weights[:, :, :, :, :2] @ v_m + weights[:, :, :, :, 2:] @ v_t
    merged = context.transpose((0, 1, 3, 2, 4)).reshape(batch, rows, hidden)
    return merged @ params[f"{prefix}.wo"] + params[f"{prefix}.ob"]


def marker_block(
    x_markers: Tensor,
    text_in: Tensor,
    params: ParamDict,
    prefix: str,
    num_heads: int,
    text_bias: np.ndarray,
) -> Tensor:
    """One pre-norm block of the marker stream.

    Marker rows cross-attend to their own pair plus the text keys, then
    pass through the block's MLP; both sublayers are residual. The text
    stream is read-only here.
    """
    normed_m = ad.layer_norm(
        x_markers, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"]
    )
    normed_t = ad.layer_norm(
        text_in, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"]
    )
    x_markers = x_markers + pair_restricted_attention(
        normed_m, normed_t, params, f"{prefix}.attn", num_heads, text_bias
    )
    normed = ad.layer_norm(
        x_markers, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"]
    )
    return x_markers + feed_forward(normed, params, f"{prefix}.ffn")


def text_key_bias(padding_mask: np.ndarray) -> np.ndarray:
    """(B, S) bool -> additive bias over text keys, (B, 1, 1, 1, S)."""
    return np.where(padding_mask, 0.0, MASK_VALUE)[:, None, None, None, :]


def run_marker_stream(
    queries: Tensor,
    text_inputs: list[Tensor],
    block_prefixes: list[str],
    params: ParamDict,
    num_heads: int,
    text_mask: np.ndarray,
    chunk_pairs: int | None = None,
) -> Tensor:
    """Drive packed marker queries through a stack of marker blocks.

    queries: (B, 2P, H); text_inputs: one (B, S, H) tensor per block (the
    text-side key/value source for that block); text_mask: bool (B, S),
    True on real tokens. Processes ceil(P / chunk_pairs) chunks of whole
    pairs and concatenates; outputs do not depend on the chunking.
    """
    if len(text_inputs) != len(block_prefixes):
        raise ShapeError("one text input per block required")
    num_pairs = queries.shape[1] // 2
    if chunk_pairs is None:
        chunk_pairs = DEFAULT_CHUNK_PAIRS
    bias = text_key_bias(text_mask)
    outputs = []
    for lo in range(0, num_pairs, chunk_pairs):
        hi = min(lo + chunk_pairs, num_pairs)
        x = queries[:, 2 * lo : 2 * hi]
        for text_in, prefix in zip(text_inputs, block_prefixes):
            x = marker_block(x, text_in, params, prefix, num_heads, bias)
        outputs.append(x)
    return outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=1)


def classify_pairs(marker_states: Tensor, params: ParamDict) -> Tensor:
    """(B, 2P, H) interleaved marker states -> (B, P, |E|) span logits.

    Start and end sides are concatenated in that order, after the optional
    pre-classifier normalization.
    """
    if "spanhead.norm.g" in params:
        marker_states = ad.layer_norm(
            marker_states, params["spanhead.norm.g"], params["spanhead.norm.b"]
        )
    batch, num_rows, hidden = marker_states.shape
    pairs = marker_states.reshape(batch, num_rows // 2, 2 * hidden)
    return pairs @ params["spanhead.w"] + params["spanhead.b"]


def decode_packed(
    queries: Tensor,
    text_states: Tensor,
    text_mask: np.ndarray,
    params: ParamDict,
    num_heads: int,
    decoder_blocks: int,
    chunk_pairs: int | None = None,
) -> Tensor:
    """Batched span decoding: (B, 2P, H) queries + (B, S, H) text ->
    (B, P, |E|) logits. The same text states feed every decoder block."""
    text_inputs = [text_states] * decoder_blocks
    prefixes = [f"dec.{b}" for b in range(decoder_blocks)]
    final = run_marker_stream(
        queries, text_inputs, prefixes, params, num_heads, text_mask, chunk_pairs
    )
    return classify_pairs(final, params)


def span_decode(
    batch: PackedSpanBatch,
    states: HiddenStates,
    params: ParamDict,
    num_heads: int,
    decoder_blocks: int,
    chunk_pairs: int | None = None,
) -> Tensor:
    """Single-sentence span decoding: one logit row per candidate (P, |E|).

    `states` must be a batch of one sentence; the padding encoded in the
    pack's cross mask determines which text keys are visible.
    """
    if states.states.shape[0] != 1:
        raise ShapeError("span_decode expects a single-sentence HiddenStates")
    if batch.num_pairs == 0:
        num_types = params["spanhead.b"].shape[0]
        return Tensor(np.zeros((0, num_types)))
    queries = batch.queries.reshape(1, 2 * batch.num_pairs, -1)
    # text stripe of the pack's cross mask: key columns beyond the markers
    text_mask = batch.cross_mask[0, 2 * batch.num_pairs :][None, :]
    logits = decode_packed(
        queries,
        states.states,
        text_mask,
        params,
        num_heads,
        decoder_blocks,
        chunk_pairs,
    )
    return logits.reshape(batch.num_pairs, -1)


# -- token heads -----------------------------------------------------------------


def token_classify(states: HiddenStates, params: ParamDict) -> Tensor:
    """Affine BIO logits per token: (B, S, |E_BI|). Padded rows carry
    values but every consumer masks them."""
    return states.states @ params["tokenhead.w"] + params["tokenhead.b"]


def sf_logits(states: HiddenStates, params: ParamDict, stop_gradient: bool = False) -> Tensor:
    x = states.states.detach() if stop_gradient else states.states
    return x @ params["sfhead.w"] + params["sfhead.b"]


def sf_scores(
    states: HiddenStates, params: ParamDict, stop_gradient: bool = False
) -> Tensor:
    """Per-token probability of the any-entity class, (B, S) in [0, 1]."""
    probs = ad.softmax(sf_logits(states, params, stop_gradient), axis=-1)
    return probs[:, :, 1]

"""Trainable transformer encoder: embeddings, learned positions, and
pre-norm self-attention blocks over float64 NumPy arrays.

Padding contract: padded positions neither attend nor are attended to,
and every consumer ignores their rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from . import autodiff as ad
from .autodiff import MASK_VALUE, Tensor
from .errors import ConfigError, ShapeError

ParamDict = dict[str, Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    num_blocks: int
    hidden_dim: int
    num_heads: int
    ffn_dim: int
    vocab_size: int
    max_positions: int = 128
    max_span_len: int = 8

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        for name in ("num_blocks", "hidden_dim", "num_heads", "ffn_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_span_len < 1:
            raise ConfigError("max_span_len must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "num_blocks": self.num_blocks,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "max_span_len": self.max_span_len,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EncoderConfig":
        return cls(**dict(raw))


@dataclass
class HiddenStates:
    """Per-token contextual vectors (batch, seq, hidden) plus validity mask."""

    states: Tensor
    mask: np.ndarray  # bool (batch, seq), True on real tokens

    def __post_init__(self):
        if self.states.shape[:2] != self.mask.shape:
            raise ShapeError(
                f"states {self.states.shape} vs mask {self.mask.shape}"
            )


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Truncated normal at +/- 2 std, the init used for all weight matrices."""
    return stats.truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def _init_block(params: ParamDict, prefix: str, cfg: EncoderConfig, rng) -> None:
    h, f = cfg.hidden_dim, cfg.ffn_dim
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.attn.{name}"] = ad.parameter(trunc_normal(rng, (h, h)))
        params[f"{prefix}.attn.{name[1]}b"] = ad.parameter(np.zeros(h))
    params[f"{prefix}.ln1.g"] = ad.parameter(np.ones(h))
    params[f"{prefix}.ln1.b"] = ad.parameter(np.zeros(h))
    params[f"{prefix}.ln2.g"] = ad.parameter(np.ones(h))
    params[f"{prefix}.ln2.b"] = ad.parameter(np.zeros(h))
    params[f"{prefix}.ffn.w1"] = ad.parameter(trunc_normal(rng, (h, f)))
    params[f"{prefix}.ffn.b1"] = ad.parameter(np.zeros(f))
    params[f"{prefix}.ffn.w2"] = ad.parameter(trunc_normal(rng, (f, h)))
    params[f"{prefix}.ffn.b2"] = ad.parameter(np.zeros(h))


def _init_encoder(
    params: ParamDict, config: EncoderConfig, rng, num_blocks: int | None = None
) -> None:
    params["embed.word"] = ad.parameter(
        trunc_normal(rng, (config.vocab_size, config.hidden_dim))
    )
    params["embed.pos"] = ad.parameter(
        trunc_normal(rng, (config.max_positions, config.hidden_dim))
    )
    for b in range(config.num_blocks if num_blocks is None else num_blocks):
        _init_block(params, f"enc.{b}", config, rng)


def init_params(config: EncoderConfig, seed: int) -> ParamDict:
    """Embeddings plus `num_blocks` self-attention blocks, deterministic in seed."""
    rng = np.random.default_rng(seed)
    params: ParamDict = {}
    _init_encoder(params, config, rng)
    return params


def multihead_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: ParamDict,
    prefix: str,
    num_heads: int,
    additive_mask: np.ndarray,
) -> Tensor:
    """Masked multi-head attention.

    q_in: (B, Tq, H); kv_in: (B, Tk, H); additive_mask broadcastable to
    (B, 1, Tq, Tk) with 0 on allowed and MASK_VALUE on disallowed entries.
    Returns (B, Tq, H) after the output projection.
    """
    batch, tq, hidden = q_in.shape
    tk = kv_in.shape[1]
    head_dim = hidden // num_heads

    def split_heads(t: Tensor, length: int) -> Tensor:
        return t.reshape(batch, length, num_heads, head_dim).transpose((0, 2, 1, 3))

    q = split_heads(q_in @ params[f"{prefix}.wq"] + params[f"{prefix}.qb"], tq)
    k = split_heads(kv_in @ params[f"{prefix}.wk"] + params[f"{prefix}.kb"], tk)
    v = split_heads(kv_in @ params[f"{prefix}.wv"] + params[f"{prefix}.vb"], tk)

    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(head_dim)) + additive_mask
    weights = ad.softmax(scores, axis=-1)
    context = (weights @ v).transpose((0, 2, 1, 3)).reshape(batch, tq, hidden)
    return context @ params[f"{prefix}.wo"] + params[f"{prefix}.ob"]


def feed_forward(x: Tensor, params: ParamDict, prefix: str) -> Tensor:
    hidden = ad.gelu(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def self_attention_block(
    x: Tensor,
    params: ParamDict,
    prefix: str,
    num_heads: int,
    additive_mask: np.ndarray,
) -> Tensor:
    """One pre-norm residual block: x + Attn(LN1(x)); x + FFN(LN2(x))."""
    normed = ad.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = x + multihead_attention(
        normed, normed, params, f"{prefix}.attn", num_heads, additive_mask
    )
    normed = ad.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return x + feed_forward(normed, params, f"{prefix}.ffn")


def padding_bias(mask: np.ndarray) -> np.ndarray:
    """(B, S) bool -> (B, 1, 1, S) additive attention bias."""
    return np.where(mask, 0.0, MASK_VALUE)[:, None, None, :]


def _check_inputs(config: EncoderConfig, token_ids: np.ndarray, mask: np.ndarray):
    token_ids = np.asarray(token_ids)
    mask = np.asarray(mask, dtype=bool)
    if token_ids.ndim != 2:
        raise ShapeError(f"token_ids must be 2-D, got shape {token_ids.shape}")
    if token_ids.shape != mask.shape:
        raise ShapeError(f"ids {token_ids.shape} vs mask {mask.shape}")
    if token_ids.shape[1] > config.max_positions:
        raise ConfigError(
            f"sequence length {token_ids.shape[1]} exceeds "
            f"max_positions {config.max_positions}"
        )
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= config.vocab_size):
        raise ConfigError("token id outside [0, vocab_size)")
    return token_ids, mask


def embed(params: ParamDict, token_ids: np.ndarray) -> Tensor:
    """Word embedding + positional embedding for a padded id matrix."""
    seq_len = token_ids.shape[1]
    positions = np.arange(seq_len)
    return params["embed.word"][token_ids] + params["embed.pos"][positions]


def encode_truncated(
    params: ParamDict,
    config: EncoderConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
    num_blocks_used: int,
    collect_block_inputs: bool = False,
):
    """Run the first `num_blocks_used` blocks.

    With collect_block_inputs=True also returns the per-block input states,
    which the marker-in-encoder strategy attends to.
    """
    if not (1 <= num_blocks_used <= config.num_blocks):
        raise ConfigError(
            f"num_blocks_used {num_blocks_used} outside [1, {config.num_blocks}]"
        )
    token_ids, mask = _check_inputs(config, token_ids, mask)
    bias = padding_bias(mask)
    x = embed(params, token_ids)
    block_inputs = []
    for b in range(num_blocks_used):
        if collect_block_inputs:
            block_inputs.append(x)
        x = self_attention_block(x, params, f"enc.{b}", config.num_heads, bias)
    states = HiddenStates(x, mask)
    if collect_block_inputs:
        return states, block_inputs
    return states


def encode(
    params: ParamDict,
    config: EncoderConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
) -> HiddenStates:
    """Full-depth encoding of a padded batch."""
    return encode_truncated(params, config, token_ids, mask, config.num_blocks)

"""Candidate spans, marker queries, and the pair-restricted attention mask.

A candidate span [i, j] (inclusive) is represented by two marker query
vectors: start marker + pos(i) and end marker + pos(j). Many candidates
are packed into one batch; the cross-attention mask lets each marker row
attend to its own pair and to real text positions only, never to markers
of other pairs. The mask is applied additively at score level
(disallowed = MASK_VALUE before normalization), which makes packed
decoding equal per-pair decoding up to float accumulation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


class SpanCandidate(NamedTuple):
    """Inclusive word-index pair with 0 <= i <= j."""

    i: int
    j: int


@dataclass
class MarkerParams:
    """The two learnable marker vectors, dimension = encoder hidden size."""

    start: Tensor
    end: Tensor


@dataclass
class PackedSpanBatch:
    """P candidate pairs packed as 2P interleaved marker query rows.

    Row 2k is the start-side query of pair k, row 2k+1 the end side.
    cross_mask is bool (2P, 2P + seq_len): key columns [0, 2P) are the
    packed markers, columns [2P, 2P + seq_len) the text positions.
    """

    queries: Tensor
    candidates: list[SpanCandidate]
    cross_mask: np.ndarray
    pair_index: np.ndarray  # (2P,) row -> candidate index
    seq_len: int

    @property
    def num_pairs(self) -> int:
        return len(self.candidates)


def enumerate_spans(seq_len: int, max_span_len: int) -> list[SpanCandidate]:
    """All [i, j] with 0 <= i <= j < seq_len and j - i + 1 <= max_span_len,
    in lexicographic order."""
    if seq_len < 0:
        raise ConfigError(f"negative seq_len {seq_len}")
    if max_span_len < 1:
        raise ConfigError(f"max_span_len must be >= 1, got {max_span_len}")
    return [
        SpanCandidate(i, j)
        for i in range(seq_len)
        for j in range(i, min(i + max_span_len, seq_len))
    ]


def span_count(seq_len: int, max_span_len: int) -> int:
    """Closed form: sum over lengths 1..min(K, L) of (L - len + 1)."""
    return sum(seq_len - n + 1 for n in range(1, min(max_span_len, seq_len) + 1))


def build_cross_mask(
    candidates: Sequence[SpanCandidate],
    seq_len: int,
    padding_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Bool (2P, 2P + seq_len): marker rows see their own pair and all
    unpadded text keys; nothing else."""
    num_pairs = len(candidates)
    rows = 2 * num_pairs
    allowed = np.zeros((rows, rows + seq_len), dtype=bool)
    if padding_mask is None:
        text_allowed = np.ones(seq_len, dtype=bool)
    else:
        text_allowed = np.asarray(padding_mask, dtype=bool)
        if text_allowed.shape != (seq_len,):
            raise ShapeError(
                f"padding mask {text_allowed.shape} vs seq_len {seq_len}"
            )
    for k in range(num_pairs):
        allowed[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = True
    allowed[:, rows:] = text_allowed
    return allowed


def span_min_probs(
    probs: np.ndarray, candidates: Sequence[SpanCandidate]
) -> np.ndarray:
    """Minimum of `probs` over each candidate's word range.

    Rolling-minimum table over span lengths, then a fancy-index lookup, so
    the cost is O(seq_len * max_len) regardless of candidate count.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not candidates:
        return np.zeros(0)
    starts = np.fromiter((c.i for c in candidates), dtype=np.int64, count=len(candidates))
    ends = np.fromiter((c.j for c in candidates), dtype=np.int64, count=len(candidates))
    lengths = ends - starts + 1
    max_len = int(lengths.max())
    table = np.full((max_len, probs.shape[0]), np.inf)
    table[0] = probs
    for n in range(1, max_len):
        table[n, : probs.shape[0] - n] = np.minimum(
            table[n - 1, : probs.shape[0] - n], probs[n:]
        )
    return table[lengths - 1, starts]


def build_markers(
    candidates: Sequence[SpanCandidate],
    marker_params: MarkerParams,
    pos_table: Tensor,
    seq_len: int,
    padding_mask: np.ndarray | None = None,
) -> PackedSpanBatch:
    """Pack marker queries for `candidates`: row 2k = start + pos(i_k),
    row 2k+1 = end + pos(j_k)."""
    candidates = [SpanCandidate(*c) for c in candidates]
    num_pairs = len(candidates)
    hidden = marker_params.start.shape[-1]
    max_positions = pos_table.shape[0]
    for c in candidates:
        if not (0 <= c.i <= c.j):
            raise ConfigError(f"bad candidate {c}")
        if c.j >= max_positions:
            raise ConfigError(
                f"candidate {c} outside positional table of size {max_positions}"
            )
    pos_idx = np.empty(2 * num_pairs, dtype=np.int64)
    pos_idx[0::2] = [c.i for c in candidates]
    pos_idx[1::2] = [c.j for c in candidates]
    marker_idx = np.tile(np.array([0, 1]), num_pairs)
    marker_table = ad.concat(
        [marker_params.start.reshape(1, hidden), marker_params.end.reshape(1, hidden)],
        axis=0,
    )
    if num_pairs:
        queries = marker_table[marker_idx] + pos_table[pos_idx]
    else:
        queries = Tensor(np.zeros((0, hidden)))
    pair_index = np.repeat(np.arange(num_pairs), 2)
    mask = build_cross_mask(candidates, seq_len, padding_mask)
    return PackedSpanBatch(queries, candidates, mask, pair_index, seq_len)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spandec import autodiff as ad
from spandec.autodiff import Tensor
from spandec.errors import ConfigError
from spandec.spans import (
    MarkerParams,
    SpanCandidate,
    build_cross_mask,
    build_markers,
    enumerate_spans,
    span_count,
    span_min_probs,
)

HIDDEN = 8


def _markers(rng):
    return MarkerParams(
        Tensor(rng.standard_normal(HIDDEN), requires_grad=True),
        Tensor(rng.standard_normal(HIDDEN), requires_grad=True),
    )


def _brute_force_spans(seq_len, max_span_len):
    out = []
    for i in range(seq_len):
        for j in range(seq_len):
            if i <= j and j - i + 1 <= max_span_len:
                out.append((i, j))
    return out


def test_enumerate_examples():
    assert enumerate_spans(3, 8) == [
        (0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2),
    ]
    assert enumerate_spans(0, 8) == []
    # reference sequence length of the cost tables
    assert len(enumerate_spans(44, 8)) == 324
    assert enumerate_spans(44, 8) == _brute_force_spans(44, 8)


@given(st.integers(0, 60), st.integers(1, 12))
@settings(max_examples=100, deadline=None)
def test_enumeration_count_matches_closed_form(seq_len, max_span_len):
    spans = enumerate_spans(seq_len, max_span_len)
    assert len(spans) == span_count(seq_len, max_span_len)
    assert spans == _brute_force_spans(seq_len, max_span_len)
    assert spans == sorted(spans)


def test_enumerate_rejects_bad_args():
    with pytest.raises(ConfigError):
        enumerate_spans(-1, 8)
    with pytest.raises(ConfigError):
        enumerate_spans(4, 0)


def test_cross_mask_single_pair():
    mask = build_cross_mask([SpanCandidate(0, 1)], seq_len=3)
    assert mask.shape == (2, 5)
    assert mask.sum(axis=1).tolist() == [5, 5]  # own 2 markers + 3 text keys


def test_cross_mask_two_pairs_isolated():
    cands = [SpanCandidate(0, 1), SpanCandidate(1, 2)]
    mask = build_cross_mask(cands, seq_len=4)
    # rows of pair 0 must not see marker keys of pair 1
    assert not mask[0:2, 2:4].any()
    assert not mask[2:4, 0:2].any()
    assert mask[0, 0] and mask[0, 1] and mask[2, 2] and mask[3, 3]
    assert mask[:, 4:].all()


def test_cross_mask_padded_text():
    padding = np.array([True, True, False])
    mask = build_cross_mask([SpanCandidate(0, 0)], seq_len=3, padding_mask=padding)
    assert mask[0, 2:].tolist() == [True, True, False]
    all_padded = build_cross_mask(
        [SpanCandidate(0, 0)], seq_len=3, padding_mask=np.zeros(3, dtype=bool)
    )
    assert all_padded[0].tolist() == [True, True, False, False, False]


def test_build_markers_rows():
    rng = np.random.default_rng(0)
    markers = _markers(rng)
    pos = Tensor(rng.standard_normal((10, HIDDEN)), requires_grad=True)
    batch = build_markers([SpanCandidate(2, 2)], markers, pos, seq_len=5)
    np.testing.assert_allclose(
        batch.queries.data[0], markers.start.data + pos.data[2]
    )
    np.testing.assert_allclose(
        batch.queries.data[1], markers.end.data + pos.data[2]
    )
    assert batch.pair_index.tolist() == [0, 0]


def test_build_markers_shared_start_rows_identical():
    rng = np.random.default_rng(1)
    markers = _markers(rng)
    pos = Tensor(rng.standard_normal((10, HIDDEN)))
    batch = build_markers(
        [SpanCandidate(1, 3), SpanCandidate(1, 4)], markers, pos, seq_len=6
    )
    np.testing.assert_array_equal(batch.queries.data[0], batch.queries.data[2])


def test_build_markers_empty():
    rng = np.random.default_rng(2)
    batch = build_markers([], _markers(rng), Tensor(np.zeros((4, HIDDEN))), seq_len=3)
    assert batch.queries.shape == (0, HIDDEN)
    assert batch.cross_mask.shape == (0, 3)


def test_build_markers_position_out_of_range():
    rng = np.random.default_rng(3)
    pos = Tensor(np.zeros((4, HIDDEN)))
    with pytest.raises(ConfigError):
        build_markers([SpanCandidate(2, 5)], _markers(rng), pos, seq_len=6)


def test_marker_gradients_flow():
    rng = np.random.default_rng(4)
    markers = _markers(rng)
    pos = Tensor(rng.standard_normal((6, HIDDEN)), requires_grad=True)
    batch = build_markers(
        [SpanCandidate(0, 2), SpanCandidate(1, 1)], markers, pos, seq_len=4
    )
    (batch.queries * batch.queries).sum().backward()
    assert markers.start.grad is not None and np.abs(markers.start.grad).sum() > 0
    assert markers.end.grad is not None
    assert pos.grad is not None and np.abs(pos.grad[3]).sum() == 0  # pos 3 unused


def test_span_min_probs_matches_naive():
    rng = np.random.default_rng(5)
    probs = rng.random(15)
    cands = enumerate_spans(15, 8)
    fast = span_min_probs(probs, cands)
    naive = np.array([probs[c.i : c.j + 1].min() for c in cands])
    np.testing.assert_array_equal(fast, naive)

import numpy as np
import pytest

from spandec import autodiff as ad
from spandec.encoder import (
    EncoderConfig,
    encode,
    encode_truncated,
    init_params,
)
from spandec.errors import ConfigError, ShapeError

from gradcheck import check_gradients

CFG = EncoderConfig(
    num_blocks=2,
    hidden_dim=16,
    num_heads=4,
    ffn_dim=32,
    vocab_size=30,
    max_positions=12,
)


def _inputs(rng, batch, lengths):
    width = max(lengths)
    ids = np.zeros((batch, width), dtype=np.int64)
    mask = np.zeros((batch, width), dtype=bool)
    for b, n in enumerate(lengths):
        ids[b, :n] = rng.integers(1, CFG.vocab_size, size=n)
        mask[b, :n] = True
    return ids, mask


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(num_blocks=2, hidden_dim=15, num_heads=4, ffn_dim=8, vocab_size=5)
    with pytest.raises(ConfigError):
        EncoderConfig(num_blocks=0, hidden_dim=16, num_heads=4, ffn_dim=8, vocab_size=5)
    assert CFG.head_dim == 4


def test_init_deterministic_and_seed_sensitive():
    p1 = init_params(CFG, seed=9)
    p2 = init_params(CFG, seed=9)
    p3 = init_params(CFG, seed=10)
    assert p1.keys() == p2.keys()
    for name in p1:
        np.testing.assert_array_equal(p1[name].data, p2[name].data)
    assert any((p1[n].data != p3[n].data).any() for n in p1)


def test_init_norms_and_biases():
    params = init_params(CFG, seed=0)
    np.testing.assert_array_equal(params["enc.0.ln1.g"].data, 1.0)
    np.testing.assert_array_equal(params["enc.0.attn.qb"].data, 0.0)
    # truncated normal: everything within 2 std of 0.02
    assert np.abs(params["embed.word"].data).max() <= 0.04 + 1e-12


def test_single_token_deterministic():
    params = init_params(CFG, seed=1)
    ids = np.array([[5]])
    mask = np.ones((1, 1), dtype=bool)
    out1 = encode(params, CFG, ids, mask).states.data
    out2 = encode(params, CFG, ids, mask).states.data
    np.testing.assert_array_equal(out1, out2)
    assert out1.shape == (1, 1, CFG.hidden_dim)


def test_batch_order_permutation():
    rng = np.random.default_rng(3)
    params = init_params(CFG, seed=1)
    ids, mask = _inputs(rng, 4, [6, 4, 5, 3])
    states = encode(params, CFG, ids, mask).states.data
    perm = np.array([2, 0, 3, 1])
    permuted = encode(params, CFG, ids[perm], mask[perm]).states.data
    np.testing.assert_allclose(permuted, states[perm], rtol=0, atol=1e-12)


def test_padding_leaves_real_rows_unchanged():
    rng = np.random.default_rng(4)
    params = init_params(CFG, seed=2)
    ids, mask = _inputs(rng, 1, [5])
    plain = encode(params, CFG, ids, mask).states.data[0, :5]
    padded_ids = np.concatenate([ids, np.zeros((1, 4), dtype=np.int64)], axis=1)
    padded_mask = np.concatenate([mask, np.zeros((1, 4), dtype=bool)], axis=1)
    padded = encode(params, CFG, padded_ids, padded_mask).states.data[0, :5]
    np.testing.assert_allclose(padded, plain, rtol=1e-5, atol=1e-10)


def test_truncated_equals_intermediate_activations():
    rng = np.random.default_rng(5)
    params = init_params(CFG, seed=3)
    ids, mask = _inputs(rng, 2, [6, 4])
    # instrumented full pass: per-block inputs; depth-k output == input of block k+1
    _, block_inputs = encode_truncated(
        params, CFG, ids, mask, CFG.num_blocks, collect_block_inputs=True
    )
    one = encode_truncated(params, CFG, ids, mask, 1).states.data
    np.testing.assert_array_equal(one, block_inputs[1].data)
    full = encode_truncated(params, CFG, ids, mask, CFG.num_blocks).states.data
    np.testing.assert_array_equal(full, encode(params, CFG, ids, mask).states.data)


def test_truncated_range_errors():
    params = init_params(CFG, seed=3)
    ids = np.array([[1, 2]])
    mask = np.ones((1, 2), dtype=bool)
    for bad in (0, CFG.num_blocks + 1):
        with pytest.raises(ConfigError):
            encode_truncated(params, CFG, ids, mask, bad)


def test_shape_and_bounds_errors():
    params = init_params(CFG, seed=3)
    with pytest.raises(ShapeError):
        encode(params, CFG, np.array([1, 2]), np.array([True, True]))
    with pytest.raises(ShapeError):
        encode(params, CFG, np.ones((1, 3), dtype=np.int64), np.ones((1, 2), dtype=bool))
    with pytest.raises(ConfigError):
        encode(
            params,
            CFG,
            np.full((1, 2), CFG.vocab_size, dtype=np.int64),
            np.ones((1, 2), dtype=bool),
        )
    with pytest.raises(ConfigError):
        encode(
            params,
            CFG,
            np.ones((1, CFG.max_positions + 1), dtype=np.int64),
            np.ones((1, CFG.max_positions + 1), dtype=bool),
        )


def test_encoder_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    params = init_params(CFG, seed=7)
    ids, mask = _inputs(rng, 2, [6, 3])
    target = rng.standard_normal((2, ids.shape[1], CFG.hidden_dim))
    weight = mask[:, :, None].astype(float)

    def loss():
        states = encode(params, CFG, ids, mask).states
        diff = (states - target) * weight
        return (diff * diff).sum() * (1.0 / weight.sum())

    failures = check_gradients(loss, params, max_per_tensor=6, seed=1)
    assert failures == [], failures[:10]

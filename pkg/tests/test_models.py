import numpy as np
import pytest

from spandec.autodiff import no_grad
from spandec.corpus import LabelSet, Sentence
from spandec.encoder import EncoderConfig, encode
from spandec.errors import ConfigError
from spandec.checkpoint import expected_param_keys
from spandec.flops import param_count
from spandec.models import (
    Model,
    ModelConfig,
    batch_inputs,
    forward_plmarker,
    forward_sf_spandec,
    forward_spandec,
    forward_token,
    init_model_params,
    num_parameters,
)
from spandec.corpus import Vocabulary

from oracles import plmarker_joint_oracle

LABELS = LabelSet(("O", "PER", "LOC"))


def _encoder_cfg(vocab=24, blocks=2, hidden=16, heads=4, maxpos=12):
    return EncoderConfig(
        num_blocks=blocks,
        hidden_dim=hidden,
        num_heads=heads,
        ffn_dim=2 * hidden,
        vocab_size=vocab,
        max_positions=maxpos,
        max_span_len=4,
    )


def _config(strategy, **kw):
    return ModelConfig(strategy=strategy, encoder=_encoder_cfg(**kw), label_set=LABELS)


def _perturbed_params(config, seed):
    params = init_model_params(config, seed)
    rng = np.random.default_rng(seed + 100)
    for name, tensor in params.items():
        if name.endswith((".g", ".b")):
            tensor.data += 0.05 * rng.standard_normal(tensor.data.shape)
    return params


def _random_batch(config, rng, lengths):
    width = max(lengths)
    ids = np.zeros((len(lengths), width), dtype=np.int64)
    mask = np.zeros((len(lengths), width), dtype=bool)
    for b, n in enumerate(lengths):
        ids[b, :n] = rng.integers(1, config.encoder.vocab_size, size=n)
        mask[b, :n] = True
    return ids, mask


# -- configuration invariants -------------------------------------------------------


def test_token_config_rules():
    cfg = _config("token")
    assert cfg.encoder_blocks_used == cfg.encoder.num_blocks
    assert cfg.decoder_blocks == 0
    with pytest.raises(ConfigError):
        ModelConfig("token", _encoder_cfg(), LABELS, decoder_blocks=1)
    with pytest.raises(ConfigError):
        ModelConfig("token", _encoder_cfg(), LABELS, encoder_blocks_used=1)


def test_spandec_default_budget_parity():
    cfg = _config("spandec")
    assert cfg.decoder_blocks == 1
    assert cfg.encoder_blocks_used == cfg.encoder.num_blocks - 1


def test_spandec_ablation_override_is_legal():
    cfg = ModelConfig(
        "spandec", _encoder_cfg(), LABELS, encoder_blocks_used=2, decoder_blocks=1
    )
    assert cfg.encoder_blocks_used == 2  # larger budget variant


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError):
        ModelConfig("crf", _encoder_cfg(), LABELS)


def test_config_dict_round_trip():
    cfg = ModelConfig("sf_spandec", _encoder_cfg(), LABELS, sf_threshold=0.3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_init_exact_parameter_sets():
    for strategy in ("token", "plmarker", "spandec", "sf_spandec"):
        cfg = _config(strategy)
        params = init_model_params(cfg, seed=0)
        assert set(params) == expected_param_keys(cfg), strategy


# -- strategy forwards ---------------------------------------------------------------


def test_forward_token_shapes_and_determinism():
    cfg = _config("token")
    params = init_model_params(cfg, seed=1)
    rng = np.random.default_rng(2)
    ids, mask = _random_batch(cfg, rng, [5, 3])
    with no_grad():
        a = forward_token(params, cfg, ids, mask).data
        b = forward_token(params, cfg, ids, mask).data
    assert a.shape == (2, 5, LABELS.num_bio)
    np.testing.assert_array_equal(a, b)


def test_plmarker_matches_joint_oracle():
    cfg = _config("plmarker")
    params = _perturbed_params(cfg, seed=3)
    rng = np.random.default_rng(4)
    length = 6
    ids, mask = _random_batch(cfg, rng, [length])
    with no_grad():
        fwd = forward_plmarker(params, cfg, ids, mask)
    data = {name: t.data for name, t in params.items()}
    oracle_logits, oracle_text = plmarker_joint_oracle(
        ids[0], fwd.candidates[0], data, cfg.encoder.num_blocks, cfg.encoder.num_heads
    )
    np.testing.assert_allclose(
        fwd.logits.data[0, : len(fwd.candidates[0])], oracle_logits,
        rtol=1e-6, atol=1e-10,
    )
    with no_grad():
        text_states = encode(params, cfg.encoder, ids, mask).states.data[0]
    np.testing.assert_allclose(text_states, oracle_text, rtol=1e-6, atol=1e-10)


def test_plmarker_text_stream_isolated_bitwise():
    # text states are computed by the plain encoder whether or not markers
    # are packed: bit-identical by construction
    cfg = _config("plmarker")
    params = init_model_params(cfg, seed=5)
    rng = np.random.default_rng(6)
    ids, mask = _random_batch(cfg, rng, [7, 4])
    with no_grad():
        with_markers = encode(params, cfg.encoder, ids, mask).states.data
        again = encode(params, cfg.encoder, ids, mask).states.data
    np.testing.assert_array_equal(with_markers, again)


def test_plmarker_chunked_equals_unchunked():
    cfg = _config("plmarker")
    import dataclasses

    small = dataclasses.replace(cfg, span_chunk_pairs=3)
    big = dataclasses.replace(cfg, span_chunk_pairs=10_000)
    params = _perturbed_params(cfg, seed=7)
    rng = np.random.default_rng(8)
    ids, mask = _random_batch(cfg, rng, [8, 5])
    with no_grad():
        fwd_small = forward_plmarker(params, small, ids, mask)
        fwd_big = forward_plmarker(params, big, ids, mask)
    # compare real candidate rows; padder rows are garbage by contract
    for row, cands in enumerate(fwd_small.candidates):
        a = fwd_small.logits.data[row, : len(cands)]
        b = fwd_big.logits.data[row, : len(cands)]
        rel = np.abs(a - b) / np.maximum(np.abs(b), 1e-12)
        assert rel.max() < 1e-5


def test_spandec_forward_counts_and_empty_sentence():
    cfg = _config("spandec")
    params = init_model_params(cfg, seed=9)
    rng = np.random.default_rng(10)
    ids, mask = _random_batch(cfg, rng, [6, 1])
    mask[1, :] = False  # row 1: empty sentence
    with no_grad():
        fwd = forward_spandec(params, cfg, ids, mask)
    assert [len(c) for c in fwd.candidates] == [
        len(fwd.candidates[0]), 0,
    ]
    assert fwd.sentence_logits(1).shape == (0, LABELS.num_types)
    assert fwd.logits.shape[2] == LABELS.num_types


def test_sf_spandec_tau_zero_logits_equal_spandec():
    cfg = _config("sf_spandec")
    params = init_model_params(cfg, seed=11)
    spandec_cfg = _config("spandec")
    rng = np.random.default_rng(12)
    ids, mask = _random_batch(cfg, rng, [7, 5])
    with no_grad():
        filtered = forward_sf_spandec(params, cfg, ids, mask, tau=0.0)
        plain = forward_spandec(params, spandec_cfg, ids, mask)
    assert filtered.candidates == plain.candidates
    np.testing.assert_array_equal(filtered.logits.data, plain.logits.data)
    assert filtered.enumerated == plain.enumerated


def test_sf_spandec_tau_above_one_retains_nothing():
    cfg = _config("sf_spandec")
    params = init_model_params(cfg, seed=13)
    rng = np.random.default_rng(14)
    ids, mask = _random_batch(cfg, rng, [6])
    with no_grad():
        fwd = forward_sf_spandec(params, cfg, ids, mask, tau=1.0 + 1e-9)
    assert fwd.candidates == [[]]
    assert fwd.enumerated[0] > 0


def test_sf_spandec_training_mode_decodes_everything():
    cfg = _config("sf_spandec")
    params = init_model_params(cfg, seed=15)
    rng = np.random.default_rng(16)
    ids, mask = _random_batch(cfg, rng, [5])
    with no_grad():
        fwd = forward_sf_spandec(params, cfg, ids, mask, tau=0.9, apply_filter=False)
    assert [len(c) for c in fwd.candidates] == fwd.enumerated
    assert fwd.sf_probs is not None


# -- parameter budget ----------------------------------------------------------------


def test_parameter_parity_spandec_vs_token():
    token_cfg = _config("token", blocks=4, hidden=32, vocab=400, maxpos=24)
    span_cfg = _config("spandec", blocks=4, hidden=32, vocab=400, maxpos=24)
    token_total = num_parameters(init_model_params(token_cfg, 0))
    span_total = num_parameters(init_model_params(span_cfg, 0))
    assert abs(span_total - token_total) / token_total < 0.02


def test_param_count_formula_matches_real_arrays():
    cfg = _config("sf_spandec", blocks=3, hidden=16, vocab=50, maxpos=10)
    params = init_model_params(cfg, 0)
    counted = param_count(
        cfg.encoder,
        encoder_blocks=cfg.encoder_blocks_used,
        decoder_blocks=cfg.decoder_blocks,
        num_entity_types=LABELS.num_types,
        with_sf_head=True,
    )
    assert counted.total == num_parameters(params)
    embeddings = num_parameters(params, "embed.")
    assert counted.embeddings == embeddings
    assert counted.per_block == num_parameters(params, "enc.0.")
    assert counted.per_block == num_parameters(params, "dec.0.")


def test_batch_inputs_padding():
    vocab = Vocabulary(("<pad>", "<unk>", "a", "b"))
    ids, mask = batch_inputs(
        vocab, [Sentence(("a", "b"), ("O", "O")), Sentence(("b",), ("O",))]
    )
    np.testing.assert_array_equal(ids, [[2, 3], [3, 0]])
    np.testing.assert_array_equal(mask, [[True, True], [True, False]])

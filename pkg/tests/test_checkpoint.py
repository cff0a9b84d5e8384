import numpy as np
import pytest

from spandec.checkpoint import expected_param_keys, load, save
from spandec.corpus import LabelSet, SyntheticSpec, build_vocab, generate_synthetic
from spandec.encoder import EncoderConfig
from spandec.errors import ConfigError
from spandec.models import Model, ModelConfig, init_model_params


def _model(strategy="sf_spandec", seed=3):
    spec = SyntheticSpec(num_sentences=10, sentence_len_range=(3, 6), entity_len_range=(1, 2))
    corpus = generate_synthetic(spec, seed=1)
    vocab = build_vocab(corpus)
    encoder = EncoderConfig(
        num_blocks=3, hidden_dim=16, num_heads=2, ffn_dim=32,
        vocab_size=len(vocab), max_positions=16,
    )
    config = ModelConfig(strategy=strategy, encoder=encoder, label_set=spec.label_set())
    return Model(config, init_model_params(config, seed), vocab)


@pytest.mark.parametrize("strategy", ["token", "plmarker", "spandec", "sf_spandec"])
def test_round_trip_bit_exact(tmp_path, strategy):
    model = _model(strategy)
    path = tmp_path / "model.npz"
    save(path, model)
    loaded = load(path)
    assert loaded.config == model.config
    assert loaded.vocab.words == model.vocab.words
    assert set(loaded.params) == set(model.params)
    for name in model.params:
        original = model.params[name].data
        restored = loaded.params[name].data
        assert original.dtype == restored.dtype
        assert original.tobytes() == restored.tobytes(), name


def test_save_is_deterministic_on_disk(tmp_path):
    model = _model()
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save(a, model)
    save(b, model)
    assert a.read_bytes() == b.read_bytes()


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load(tmp_path / "absent.npz")


def test_inconsistent_params_rejected(tmp_path):
    model = _model()
    del model.params["sfhead.w"]
    path = tmp_path / "broken.npz"
    save(path, model)
    with pytest.raises(ConfigError, match="sfhead.w"):
        load(path)


def test_expected_keys_match_init_for_all_strategies():
    for strategy in ("token", "plmarker", "spandec", "sf_spandec"):
        model = _model(strategy)
        assert set(model.params) == expected_param_keys(model.config)


def test_loaded_params_are_trainable(tmp_path):
    model = _model("token")
    path = tmp_path / "m.npz"
    save(path, model)
    loaded = load(path)
    assert all(t.requires_grad for t in loaded.params.values())

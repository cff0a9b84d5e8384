"""Checkpoint container.

A single NPZ file (zip of NPY members, format version recorded) holding a
JSON metadata blob (container version, model config, vocabulary) and one
float64 array per named parameter. NPY stores raw IEEE-754 bytes, so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import Vocabulary
from .errors import ConfigError
from .models import Model, ModelConfig

FORMAT_VERSION = 1
_META_KEY = "meta_json"
_PARAM_PREFIX = "param::"


def _expected_block_keys(prefix: str) -> set[str]:
    keys = set()
    for name in ("wq", "qb", "wk", "kb", "wv", "vb", "wo", "ob"):
        keys.add(f"{prefix}.attn.{name}")
    for name in ("ln1.g", "ln1.b", "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"):
        keys.add(f"{prefix}.{name}")
    return keys


def expected_param_keys(config: ModelConfig) -> set[str]:
    """The exact parameter names a strategy's model must carry."""
    keys = {"embed.word", "embed.pos"}
    for b in range(config.encoder_blocks_used):
        keys |= _expected_block_keys(f"enc.{b}")
    if config.strategy == "token":
        keys |= {"tokenhead.w", "tokenhead.b"}
        return keys
    keys |= {"marker.start", "marker.end", "spanhead.w", "spanhead.b"}
    if config.classifier_final_norm:
        keys |= {"spanhead.norm.g", "spanhead.norm.b"}
    if config.strategy in ("spandec", "sf_spandec"):
        for b in range(config.decoder_blocks):
            keys |= _expected_block_keys(f"dec.{b}")
    if config.strategy == "sf_spandec":
        keys |= {"sfhead.w", "sfhead.b"}
    return keys


def save(path: str | Path, model: Model) -> None:
    path = Path(path)
    meta = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.words),
    }
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    arrays = {_PARAM_PREFIX + name: t.data for name, t in model.params.items()}
    with path.open("wb") as handle:
        np.savez(handle, **{_META_KEY: blob}, **arrays)


def load(path: str | Path) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    with np.load(path) as payload:
        meta = json.loads(bytes(payload[_META_KEY].tobytes()).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"checkpoint format {meta.get('format_version')} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        config = ModelConfig.from_dict(meta["config"])
        params = {
            name[len(_PARAM_PREFIX):]: ad.Tensor(payload[name], requires_grad=True)
            for name in payload.files
            if name.startswith(_PARAM_PREFIX)
        }
    missing = expected_param_keys(config) - set(params)
    extra = set(params) - expected_param_keys(config)
    if missing or extra:
        raise ConfigError(
            f"checkpoint parameters inconsistent with config "
            f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})"
        )
    vocab = Vocabulary(tuple(meta["vocab"]))
    return Model(config, params, vocab)

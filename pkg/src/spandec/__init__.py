"""Span-based NER at desk scale.

Four strategies over a shared from-scratch transformer encoder (token
classification, levitated markers in the encoder, a lightweight span
decoder, and span filtering), together with an analytical FLOPs cost
model and a throughput benchmark harness.
"""

from .corpus import (
    EntitySpan,
    LabelSet,
    Sentence,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    generate_synthetic,
    load_conll,
    save_conll,
    spans_to_tags,
    tags_to_spans,
)
from .encoder import EncoderConfig, HiddenStates, encode, encode_truncated, init_params
from .evaluate import PRF, ThroughputReport, benchmark_throughput, micro_f1
from .flops import FlopsParams, StrategyCost, param_count, strategy_gflops
from .infer import Prediction, decode_bio, decode_spans, filter_spans, predict, predict_batch, sweep_tau
from .models import Model, ModelConfig, init_model_params
from .spans import SpanCandidate, build_cross_mask, build_markers, enumerate_spans
from .train import TrainConfig, TrainReport, desk_train_config, train

__version__ = "0.1.0"

__all__ = [
    "EntitySpan",
    "LabelSet",
    "Sentence",
    "SyntheticSpec",
    "Vocabulary",
    "build_vocab",
    "generate_synthetic",
    "load_conll",
    "save_conll",
    "spans_to_tags",
    "tags_to_spans",
    "EncoderConfig",
    "HiddenStates",
    "encode",
    "encode_truncated",
    "init_params",
    "PRF",
    "ThroughputReport",
    "benchmark_throughput",
    "micro_f1",
    "FlopsParams",
    "StrategyCost",
    "param_count",
    "strategy_gflops",
    "Prediction",
    "decode_bio",
    "decode_spans",
    "filter_spans",
    "predict",
    "predict_batch",
    "sweep_tau",
    "Model",
    "ModelConfig",
    "init_model_params",
    "SpanCandidate",
    "build_cross_mask",
    "build_markers",
    "enumerate_spans",
    "TrainConfig",
    "TrainReport",
    "desk_train_config",
    "train",
]

"""Analytical FLOPs and parameter-count model.

Counts attention and FFN matrix work only (one MAC = 2 FLOPs); embedding
lookups, classifier heads, activations, and normalizations are excluded
by default since together they contribute on the order of 2% or less. An
optional overhead estimate can be enabled for sensitivity analysis.

Marker-count convention: M is the marker token length used verbatim in
the cross-attention and marker-FFN terms (M tokens = M/2 pairs). The
published tables for sequence length 44 use M = 324, which equals the
number of candidate PAIRS at max span length 8; `marker_tokens` exposes
both readings rather than guessing intent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

from .encoder import EncoderConfig
from .errors import ConfigError

GFLOP = 1e9

# Architecture presets: block count, hidden size, heads, FFN inner size.
PRESETS: dict[str, dict[str, int]] = {
    "minilm": {"L": 12, "H_dim": 384, "A": 12, "F_dim": 1536},
    "bert-b": {"L": 12, "H_dim": 768, "A": 12, "F_dim": 3072},
    "roberta-l": {"L": 24, "H_dim": 1024, "A": 16, "F_dim": 4096},
}

REFERENCE_SEQ_LEN = 44
REFERENCE_MARKERS = 324


@dataclass(frozen=True)
class FlopsParams:
    """Symbol set of the cost model."""

    L: int  # transformer block count
    S: int  # input sequence length (tokens)
    M: int  # span-marker token count (M/2 pairs)
    H_dim: int
    A: int
    F_dim: int

    def __post_init__(self):
        if self.H_dim % self.A != 0:
            raise ConfigError(f"H_dim {self.H_dim} not divisible by A {self.A}")
        for name in ("L", "H_dim", "A", "F_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.S < 0 or self.M < 0:
            raise ConfigError("S and M must be >= 0")

    @property
    def H_head(self) -> int:
        return self.H_dim // self.A

    @classmethod
    def from_preset(
        cls, name: str, S: int = REFERENCE_SEQ_LEN, M: int = REFERENCE_MARKERS
    ) -> "FlopsParams":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
        p = PRESETS[name]
        return cls(L=p["L"], S=S, M=M, H_dim=p["H_dim"], A=p["A"], F_dim=p["F_dim"])


def marker_tokens(num_pairs: int, convention: str = "paper") -> int:
    """Marker token count for a candidate pair count.

    "paper" reproduces the published arithmetic (M equals the pair count);
    "strict" counts two marker tokens per pair.
    """
    if convention == "paper":
        return num_pairs
    if convention == "strict":
        return 2 * num_pairs
    raise ConfigError(f"unknown marker convention {convention!r}")


# -- per-block closed forms --------------------------------------------------------


def attn_text_flops(p: FlopsParams) -> int:
    """Bidirectional self-attention over S text tokens, per block:
    8*S*H^2 projections plus 4*S^2*H score/value work."""
    return 8 * p.S * p.H_dim**2 + 4 * p.S**2 * p.H_dim


def ffn_text_flops(p: FlopsParams) -> int:
    """Two-layer FFN over S text tokens, per block: 4*S*H*F."""
    return 4 * p.S * p.H_dim * p.F_dim


def attn_marker_flops(p: FlopsParams) -> int:
    """Cross-attention of M marker tokens against S text keys, per block:
    8*M*H^2 projections plus 4*S*M*H score/value work."""
    return 8 * p.M * p.H_dim**2 + 4 * p.S * p.M * p.H_dim


def ffn_marker_flops(p: FlopsParams) -> int:
    """FFN over M marker tokens, per block: 4*M*H*F."""
    return 4 * p.M * p.H_dim * p.F_dim


def _text_block(p: FlopsParams) -> int:
    return attn_text_flops(p) + ffn_text_flops(p)


def _marker_block(p: FlopsParams) -> int:
    return attn_marker_flops(p) + ffn_marker_flops(p)


# -- strategy totals ----------------------------------------------------------------


@dataclass(frozen=True)
class StrategyCost:
    strategy: str
    encoder_blocks: int
    decoder_blocks: int
    retention: float
    flops: int
    params: FlopsParams

    @property
    def gflops(self) -> float:
        return self.flops / GFLOP

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "encoder_blocks": self.encoder_blocks,
            "decoder_blocks": self.decoder_blocks,
            "retention": self.retention,
            "flops": self.flops,
            "gflops": self.gflops,
        }


def strategy_gflops(
    strategy: str,
    p: FlopsParams,
    encoder_blocks: int | None = None,
    decoder_blocks: int | None = None,
    retention: float = 1.0,
) -> StrategyCost:
    """Inference cost of one strategy under the closed-form model.

    token    : L text blocks.
    plmarker : L blocks carrying both text and marker work.
    spandec  : encoder_blocks text blocks (default L-1) plus decoder_blocks
               marker blocks (default 1).
    sf_spandec: spandec with M scaled to round(retention * M).
    """
    if not (0.0 < retention <= 1.0):
        raise ConfigError(f"retention {retention} outside (0, 1]")
    if strategy in ("token", "plmarker"):
        if decoder_blocks not in (None, 0):
            raise ConfigError(f"{strategy} takes no decoder blocks")
        if encoder_blocks is not None and encoder_blocks != p.L:
            raise ConfigError(f"{strategy} uses all {p.L} blocks")
        if retention != 1.0:
            raise ConfigError("retention applies to sf_spandec only")
        if strategy == "token":
            return StrategyCost(strategy, p.L, 0, 1.0, p.L * _text_block(p), p)
        return StrategyCost(
            strategy, p.L, 0, 1.0, p.L * (_text_block(p) + _marker_block(p)), p
        )
    if strategy in ("spandec", "sf_spandec"):
        dec = 1 if decoder_blocks is None else decoder_blocks
        enc = (p.L - dec) if encoder_blocks is None else encoder_blocks
        if dec < 1 or enc < 1:
            raise ConfigError(f"bad block split {enc}+{dec}")
        if strategy == "spandec" and retention != 1.0:
            raise ConfigError("retention applies to sf_spandec only")
        effective = p if retention == 1.0 else replace(p, M=round(retention * p.M))
        total = enc * _text_block(p) + dec * _marker_block(effective)
        return StrategyCost(strategy, enc, dec, retention, total, p)
    raise ConfigError(f"unknown strategy {strategy!r}")


# -- parameter counts ----------------------------------------------------------------


@dataclass(frozen=True)
class ParamCount:
    embeddings: int
    per_block: int
    encoder_blocks: int
    decoder_blocks: int
    heads: int

    @property
    def encoder_total(self) -> int:
        return self.embeddings + self.encoder_blocks * self.per_block

    @property
    def decoder_total(self) -> int:
        return self.decoder_blocks * self.per_block

    @property
    def total(self) -> int:
        return self.encoder_total + self.decoder_total + self.heads

    def to_dict(self) -> dict:
        return {
            "embeddings": self.embeddings,
            "per_block": self.per_block,
            "encoder_blocks": self.encoder_blocks,
            "decoder_blocks": self.decoder_blocks,
            "encoder_total": self.encoder_total,
            "decoder_total": self.decoder_total,
            "heads": self.heads,
            "total": self.total,
        }


def block_param_count(hidden_dim: int, ffn_dim: int) -> int:
    """Weights, biases and the two norms of one (self- or cross-)attention
    block; identical for encoder and decoder blocks."""
    attn = 4 * (hidden_dim * hidden_dim + hidden_dim)
    norms = 4 * hidden_dim
    ffn = 2 * hidden_dim * ffn_dim + ffn_dim + hidden_dim
    return attn + norms + ffn


def param_count(
    config: EncoderConfig,
    encoder_blocks: int | None = None,
    decoder_blocks: int = 0,
    vocab_size: int | None = None,
    num_entity_types: int = 0,
    num_bio_labels: int = 0,
    with_sf_head: bool = False,
) -> ParamCount:
    """Parameter totals for a block split, mirroring the live model layout."""
    vocab = config.vocab_size if vocab_size is None else vocab_size
    enc = config.num_blocks if encoder_blocks is None else encoder_blocks
    h = config.hidden_dim
    embeddings = vocab * h + config.max_positions * h
    heads = 0
    if num_bio_labels:
        heads += h * num_bio_labels + num_bio_labels
    if num_entity_types:
        # markers + final norm + pair classifier
        heads += 2 * h + 2 * h + 2 * h * num_entity_types + num_entity_types
    if with_sf_head:
        heads += 2 * h + 2
    return ParamCount(
        embeddings=embeddings,
        per_block=block_param_count(h, config.ffn_dim),
        encoder_blocks=enc,
        decoder_blocks=decoder_blocks,
        heads=heads,
    )


# -- table construction ---------------------------------------------------------------


def cost_table(
    preset_names: list[str],
    strategies: list[str],
    seq_len: int = REFERENCE_SEQ_LEN,
    markers: int = REFERENCE_MARKERS,
    retention: float = 0.15,
    custom: Mapping[str, Mapping[str, int]] | None = None,
) -> list[dict]:
    """GFLOPs rows (one per config x strategy) in table layout."""
    sources: dict[str, dict] = {}
    for name in preset_names:
        sources[name] = PRESETS[name]
    for name, payload in (custom or {}).items():
        sources[name] = dict(payload)
    rows = []
    for name, arch in sources.items():
        p = FlopsParams(
            L=arch["L"], S=seq_len, M=markers,
            H_dim=arch["H_dim"], A=arch["A"], F_dim=arch["F_dim"],
        )
        for strategy in strategies:
            cost = strategy_gflops(
                strategy, p, retention=retention if strategy == "sf_spandec" else 1.0
            )
            rows.append(
                {
                    "config": name,
                    "strategy": strategy,
                    "blocks": f"{cost.encoder_blocks}+{cost.decoder_blocks}",
                    "seq_len": seq_len,
                    "markers": markers,
                    "retention": cost.retention,
                    "gflops": round(cost.gflops, 2),
                }
            )
    return rows

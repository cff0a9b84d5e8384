"""Corpus handling: CoNLL column files, the BIO tag codec, vocabularies,
and a seeded synthetic corpus generator for desk-scale experiments.

All data objects are immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, CorpusFormatError, TagValidationError

log = logging.getLogger(__name__)

O_TAG = "O"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class EntitySpan(NamedTuple):
    """Inclusive word-index range [start, end] typed with a non-O entity type."""

    start: int
    end: int
    entity_type: str


@dataclass(frozen=True)
class LabelSet:
    """Entity type inventory with O at index 0, plus its BIO expansion."""

    entity_types: tuple[str, ...]
    bio_labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        types = tuple(self.entity_types)
        if not types or types[0] != O_TAG:
            types = (O_TAG,) + tuple(t for t in types if t != O_TAG)
        if len(set(types)) != len(types):
            raise ConfigError(f"duplicate entity types in {types}")
        object.__setattr__(self, "entity_types", types)
        bio = [O_TAG]
        for t in types[1:]:
            bio.extend((f"B-{t}", f"I-{t}"))
        object.__setattr__(self, "bio_labels", tuple(bio))

    @property
    def num_types(self) -> int:
        return len(self.entity_types)

    @property
    def num_bio(self) -> int:
        return len(self.bio_labels)

    def type_index(self, entity_type: str) -> int:
        return self.entity_types.index(entity_type)

    def bio_index(self, tag: str) -> int:
        try:
            return self.bio_labels.index(tag)
        except ValueError:
            raise TagValidationError(f"tag {tag!r} not in label set") from None


@dataclass(frozen=True)
class Sentence:
    """A word sequence with aligned BIO tags."""

    words: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.words) != len(self.tags):
            raise CorpusFormatError(
                f"{len(self.words)} words vs {len(self.tags)} tags"
            )

    def __len__(self) -> int:
        return len(self.words)

    @property
    def entities(self) -> list[EntitySpan]:
        return tags_to_spans(self.tags)


Corpus = list[Sentence]


# -- BIO codec -----------------------------------------------------------------


def tags_to_spans(tags: Sequence[str]) -> list[EntitySpan]:
    """Decode a BIO sequence into entity spans.

    Lenient repair: an I-X with no open span of type X starts a new span,
    the common evaluation convention. Total on any tag sequence over the
    label set.
    """
    spans: list[EntitySpan] = []
    start = -1
    current = None
    for idx, tag in enumerate(tags):
        if tag == O_TAG:
            if current is not None:
                spans.append(EntitySpan(start, idx - 1, current))
                current = None
            continue
        marker, _, etype = tag.partition("-")
        if marker == "B" or current != etype:
            if current is not None:
                spans.append(EntitySpan(start, idx - 1, current))
            start, current = idx, etype
    if current is not None:
        spans.append(EntitySpan(start, len(tags) - 1, current))
    return spans


def spans_to_tags(spans: Iterable[EntitySpan], length: int) -> list[str]:
    """Encode non-overlapping spans as a BIO sequence of `length` tags."""
    tags = [O_TAG] * length
    for span in sorted(spans):
        if not (0 <= span.start <= span.end < length):
            raise CorpusFormatError(f"span {span} out of range for length {length}")
        if span.entity_type == O_TAG:
            raise CorpusFormatError("span typed as O")
        for pos in range(span.start, span.end + 1):
            if tags[pos] != O_TAG:
                raise CorpusFormatError(f"overlapping spans at word {pos}")
        tags[span.start] = f"B-{span.entity_type}"
        for pos in range(span.start + 1, span.end + 1):
            tags[pos] = f"I-{span.entity_type}"
    return tags


# -- CoNLL column files ---------------------------------------------------------


def load_conll(path: str | Path, label_set: LabelSet) -> Corpus:
    """Read a CoNLL-style column file: word first, tag last, blank line
    between sentences. Tags are validated against `label_set`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such corpus file: {path}")
    valid = set(label_set.bio_labels)
    sentences: Corpus = []
    words: list[str] = []
    tags: list[str] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                if words:
                    sentences.append(Sentence(tuple(words), tuple(tags)))
                    words, tags = [], []
                continue
            columns = line.split()
            if len(columns) < 2:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected >= 2 columns, got {len(columns)}"
                )
            tag = columns[-1]
            if tag not in valid:
                raise TagValidationError(
                    f"{path}:{lineno}: unknown tag {tag!r} for label set"
                )
            words.append(columns[0])
            tags.append(tag)
    if words:
        sentences.append(Sentence(tuple(words), tuple(tags)))
    overlong = long_entity_report(sentences)
    if overlong:
        log.warning(
            "%s: %d entities longer than 8 words (kept in gold tags)",
            path,
            len(overlong),
        )
    return sentences


def scan_label_set(*paths: str | Path) -> LabelSet:
    """Collect the entity types present in CoNLL files (for building the
    label set before a validated load)."""
    types: set[str] = set()
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such corpus file: {path}")
        with path.open(encoding="utf-8") as handle:
            for raw in handle:
                line = raw.strip()
                if not line:
                    continue
                tag = line.split()[-1]
                if tag != O_TAG:
                    types.add(tag.partition("-")[2] or tag)
    return LabelSet((O_TAG,) + tuple(sorted(types)))


def save_conll(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for sentence in corpus:
            for word, tag in zip(sentence.words, sentence.tags):
                handle.write(f"{word} {tag}\n")
            handle.write("\n")


def long_entity_report(
    corpus: Corpus, max_len: int = 8
) -> list[tuple[int, EntitySpan]]:
    """(sentence index, span) for every gold entity longer than `max_len` words."""
    flagged = []
    for idx, sentence in enumerate(corpus):
        for span in sentence.entities:
            if span.end - span.start + 1 > max_len:
                flagged.append((idx, span))
    return flagged


# -- vocabulary ------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Dense word -> id map with reserved PAD and UNK slots."""

    words: tuple[str, ...]  # index = id; includes PAD at 0 and UNK at 1

    PAD = 0
    UNK = 1

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if self.words[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ConfigError("vocabulary must start with PAD, UNK")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self) -> int:
        return len(self.words)

    def id(self, word: str) -> int:
        return self._index.get(word, self.UNK)

    def encode(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.id(w) for w in words], dtype=np.int64)


def build_vocab(corpus: Corpus, min_freq: int = 1) -> Vocabulary:
    """Ids for every word with frequency >= min_freq; rarer words map to UNK.

    Deterministic: sorted by (-frequency, word).
    """
    if not corpus:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for sentence in corpus for w in sentence.words)
    kept = sorted(
        (w for w, c in counts.items() if c >= min_freq),
        key=lambda w: (-counts[w], w),
    )
    return Vocabulary(tuple([PAD_TOKEN, UNK_TOKEN] + kept))


# -- synthetic corpus -------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Configuration for the seeded synthetic NER corpus.

    Entity surface forms are drawn from per-type sub-vocabularies with
    distinct begin and continuation words, so exact boundaries are
    inferable from the words alone and the task is learnable to ~100 F1.
    """

    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG")
    begin_vocab_size: int = 8
    continue_vocab_size: int = 8
    filler_vocab_size: int = 50
    sentence_len_range: tuple[int, int] = (6, 16)
    entity_len_range: tuple[int, int] = (1, 4)
    entities_per_sentence: tuple[int, int] = (0, 3)
    num_sentences: int = 200
    adjacent_same_type_rate: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "sentence_len_range", tuple(self.sentence_len_range))
        object.__setattr__(self, "entity_len_range", tuple(self.entity_len_range))
        object.__setattr__(
            self, "entities_per_sentence", tuple(self.entities_per_sentence)
        )
        lo, hi = self.entity_len_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad entity length range {self.entity_len_range}")
        if hi > 8:
            raise ConfigError(
                f"entity length range {self.entity_len_range} exceeds the "
                "8-word maximum span length"
            )
        if O_TAG in self.entity_types:
            raise ConfigError("entity_types must not include O")

    def label_set(self) -> LabelSet:
        return LabelSet((O_TAG,) + self.entity_types)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        raw = json.loads(text)
        for key in (
            "entity_types",
            "sentence_len_range",
            "entity_len_range",
            "entities_per_sentence",
        ):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def _type_vocabs(spec: SyntheticSpec) -> dict[str, tuple[list[str], list[str]]]:
    vocabs = {}
    for etype in spec.entity_types:
        stem = etype.lower()
        begins = [f"{stem}b{k}" for k in range(spec.begin_vocab_size)]
        continues = [f"{stem}c{k}" for k in range(spec.continue_vocab_size)]
        vocabs[etype] = (begins, continues)
    return vocabs


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Corpus:
    """Deterministic synthetic corpus: a pure function of (spec, seed).

    Sentences mix filler words with typed entities; with probability
    `adjacent_same_type_rate` an entity is placed flush against the
    previous one with the same type, the boundary case BIO's B- tag and
    span maximality exist for.
    """
    rng = np.random.default_rng(seed)
    vocabs = _type_vocabs(spec)
    fillers = [f"w{k}" for k in range(spec.filler_vocab_size)]
    types = list(spec.entity_types)
    corpus: Corpus = []
    for _ in range(spec.num_sentences):
        target_len = int(rng.integers(spec.sentence_len_range[0], spec.sentence_len_range[1] + 1))
        n_entities = int(
            rng.integers(spec.entities_per_sentence[0], spec.entities_per_sentence[1] + 1)
        )
        words: list[str] = []
        spans: list[EntitySpan] = []
        prev_type: str | None = None
        for k in range(n_entities):
            adjacent = (
                prev_type is not None
                and bool(rng.random() < spec.adjacent_same_type_rate)
            )
            if adjacent:
                etype = prev_type
            else:
                gap = int(rng.integers(1, 4)) if words else int(rng.integers(0, 3))
                words.extend(str(rng.choice(fillers)) for _ in range(gap))
                etype = str(rng.choice(types))
            begins, continues = vocabs[etype]
            length = int(rng.integers(spec.entity_len_range[0], spec.entity_len_range[1] + 1))
            start = len(words)
            words.append(str(rng.choice(begins)))
            words.extend(str(rng.choice(continues)) for _ in range(length - 1))
            spans.append(EntitySpan(start, start + length - 1, etype))
            prev_type = etype
        while len(words) < target_len:
            words.append(str(rng.choice(fillers)))
        corpus.append(Sentence(tuple(words), tuple(spans_to_tags(spans, len(words)))))
    return corpus

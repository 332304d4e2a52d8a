from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from subwordner.errors import EmptyCorpus, InvalidConfig, MalformedLine
from subwordner.files import read_text, write_text_atomic
from subwordner.rules import OUTSIDE_LABEL, SPLIT_NAMES


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSentence:
    words: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.words) != len(self.tags):
            raise ValueError(f"sentence has {len(self.words)} words but {len(self.tags)} tags")
        if not self.words:
            raise ValueError("sentence must contain at least one word")
        for word in self.words:
            if not word or any(ch.isspace() for ch in word):
                raise ValueError(f"invalid word {word!r}: words are non-empty and contain no whitespace")
        for tag in self.tags:
            if not tag or any(ch.isspace() for ch in tag):
                raise ValueError(f"invalid tag {tag!r}")

    def __len__(self) -> int:
        return len(self.words)

    def pairs(self) -> list[tuple[str, str]]:
        return list(zip(self.words, self.tags))


@dataclass(frozen=True)
class LabeledCorpus:
    sentences: tuple[LabeledSentence, ...]
    split_name: str = "unsplit"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.split_name not in SPLIT_NAMES:
            raise ValueError("split_name must be one of: " + ", ".join(SPLIT_NAMES))

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[LabeledSentence]:
        return iter(self.sentences)

    def tag_set(self) -> set[str]:
        return {tag for sentence in self.sentences for tag in sentence.tags}

    def word_lists(self) -> list[tuple[str, ...]]:
        return [sentence.words for sentence in self.sentences]


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]
    index_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if OUTSIDE_LABEL not in labels:
            raise ValueError(f"label set must contain {OUTSIDE_LABEL!r}")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be distinct")
        object.__setattr__(self, "index_of", {label: i for i, label in enumerate(labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self.index_of

    def index(self, label: str) -> int:
        return self.index_of[label]

    def label(self, index: int) -> str:
        return self.labels[index]


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    token_count: int
    tag_count: int
    per_label_counts: dict[str, int]


def parse_conll(text: str, split_name: str = "unsplit", *, path: str = "") -> LabeledCorpus:
    sentences: list[LabeledSentence] = []
    words: list[str] = []
    tags: list[str] = []

    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            if words:
                sentences.append(LabeledSentence(tuple(words), tuple(tags)))
                words, tags = [], []
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise MalformedLine(line_no, line, path=path)
        word, tag = fields
        if any(ch.isspace() for ch in word) or any(ch.isspace() for ch in tag):
            raise MalformedLine(line_no, line, path=path)
        words.append(word)
        tags.append(tag)

    if words:
        sentences.append(LabeledSentence(tuple(words), tuple(tags)))
    if not sentences:
        raise EmptyCorpus(path=path)
    return LabeledCorpus(tuple(sentences), split_name)


def write_conll(corpus: LabeledCorpus) -> str:
    chunks: list[str] = []
    for sentence in corpus.sentences:
        chunks.extend(f"{word}\t{tag}\n" for word, tag in sentence.pairs())
        chunks.append("\n")
    return "".join(chunks)


def read_conll(path: str | Path, split_name: str = "unsplit") -> LabeledCorpus:
    corpus = parse_conll(read_text(path), split_name, path=str(path))
    logger.debug("Read %d sentences from %s", len(corpus), path)
    return corpus


def save_conll(corpus: LabeledCorpus, path: str | Path) -> Path:
    return write_text_atomic(path, write_conll(corpus))


def corpus_stats(corpus: LabeledCorpus) -> CorpusStats:
    counts: Counter[str] = Counter()
    for sentence in corpus.sentences:
        counts.update(sentence.tags)
    token_count = sum(len(sentence) for sentence in corpus.sentences)
    tag_count = sum(n for label, n in counts.items() if label != OUTSIDE_LABEL)
    return CorpusStats(
        sentence_count=len(corpus.sentences),
        token_count=token_count,
        tag_count=tag_count,
        per_label_counts=dict(sorted(counts.items())),
    )


def build_label_set(corpus: LabeledCorpus) -> LabelSet:
    if not corpus.sentences:
        raise EmptyCorpus()
    observed = corpus.tag_set() - {OUTSIDE_LABEL}
    return LabelSet((OUTSIDE_LABEL, *sorted(observed)))


# Synthetic morphologically-inflected corpus.

CONSONANTS = "bdgjklmnprstv"
VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    """Entity words are stem+suffix; the suffix alone decides the class."""

    classes: tuple[str, ...] = ("NEL", "NEP", "NEO")
    suffixes: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {"NEL": ("pur", "gad"), "NEP": ("rao", "kar"), "NEO": ("sangh", "dal")}
    )
    stems_per_class: int = 30
    n_train: int = 300
    n_validation: int = 60
    n_test: int = 100
    len_min: int = 4
    len_max: int = 10
    oov_rate: float = 0.5
    fillers: int = 120
    entity_rate: float = 0.3
    seed: int = 13

    def validate(self) -> None:
        if not self.classes:
            raise InvalidConfig("classes must name at least one entity class", path="classes")
        if self.stems_per_class <= 0:
            raise InvalidConfig("stems_per_class must be positive (empty gazetteer)", path="stems_per_class")
        for name in self.classes:
            if not self.suffixes.get(name):
                raise InvalidConfig(f"class {name!r} has an empty suffix inventory", path="suffixes")
        all_suffixes = [suffix for name in self.classes for suffix in self.suffixes[name]]
        for suffix in all_suffixes:
            if not suffix.isalpha():
                raise InvalidConfig(f"suffix {suffix!r} must be alphabetic", path="suffixes")
        for name in self.classes:
            for other in self.classes:
                if name == other:
                    continue
                for a in self.suffixes[name]:
                    for b in self.suffixes[other]:
                        if a.endswith(b):
                            raise InvalidConfig(
                                f"suffix {a!r} of {name} ends with suffix {b!r} of {other}", path="suffixes"
                            )
        if not 0.0 <= self.oov_rate <= 1.0:
            raise InvalidConfig("oov_rate must lie in [0, 1]", path="oov_rate")
        if not 0.0 < self.entity_rate <= 1.0:
            raise InvalidConfig("entity_rate must lie in (0, 1]", path="entity_rate")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise InvalidConfig("need 1 <= len_min <= len_max", path="len_min")
        if min(self.n_train, self.n_test) < 1 or self.n_validation < 0:
            raise InvalidConfig("split sizes must be positive", path="n_train")
        if self.fillers < 1:
            raise InvalidConfig("fillers must be positive", path="fillers")

    def entity_suffixes(self) -> list[str]:
        return [suffix for name in self.classes for suffix in self.suffixes[name]]


@dataclass(frozen=True)
class _Gazetteer:
    seen: dict[str, tuple[str, ...]]
    unseen: dict[str, tuple[str, ...]]
    fillers: tuple[str, ...]


def _syllables() -> list[str]:
    return [c + v for c in CONSONANTS for v in VOWELS]


def _build_gazetteer(config: SynthConfig, rng: np.random.Generator) -> _Gazetteer:
    syllables = _syllables()
    pool = [a + b for a in syllables for b in syllables]
    needed = 2 * config.stems_per_class * len(config.classes)
    if needed > len(pool):
        raise InvalidConfig(f"stems_per_class too large: need {needed} stems, only {len(pool)} exist")
    chosen = [pool[i] for i in rng.permutation(len(pool))[:needed]]
    seen: dict[str, tuple[str, ...]] = {}
    unseen: dict[str, tuple[str, ...]] = {}
    k = config.stems_per_class
    for pos, name in enumerate(config.classes):
        block = chosen[2 * k * pos : 2 * k * (pos + 1)]
        seen[name] = tuple(block[:k])
        unseen[name] = tuple(block[k:])

    stems = set(chosen)
    suffixes = config.entity_suffixes()
    candidates = syllables + pool
    fillers: list[str] = []
    for i in rng.permutation(len(candidates)):
        word = candidates[i]
        if word in stems or any(word.endswith(suffix) for suffix in suffixes):
            continue
        fillers.append(word)
        if len(fillers) == config.fillers:
            break
    if len(fillers) < config.fillers:
        raise InvalidConfig(f"cannot draw {config.fillers} distinct filler words", path="fillers")
    return _Gazetteer(seen=seen, unseen=unseen, fillers=tuple(fillers))


def _streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("gazetteer", "train", "validation", "test")
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def _sentences(
    config: SynthConfig,
    gazetteer: _Gazetteer,
    rng: np.random.Generator,
    count: int,
    oov_rate: float,
) -> list[LabeledSentence]:
    out: list[LabeledSentence] = []
    for _ in range(count):
        length = int(rng.integers(config.len_min, config.len_max + 1))
        words: list[str] = []
        tags: list[str] = []
        for _ in range(length):
            if rng.random() < config.entity_rate:
                name = config.classes[int(rng.integers(len(config.classes)))]
                pool = gazetteer.unseen[name] if rng.random() < oov_rate else gazetteer.seen[name]
                stem = pool[int(rng.integers(len(pool)))]
                options = config.suffixes[name]
                words.append(stem + options[int(rng.integers(len(options)))])
                tags.append(f"B-{name}")
            else:
                words.append(gazetteer.fillers[int(rng.integers(len(gazetteer.fillers)))])
                tags.append(OUTSIDE_LABEL)
        out.append(LabeledSentence(tuple(words), tuple(tags)))
    return out


def generate_synthetic(config: SynthConfig, seed: int, split: str = "train") -> LabeledCorpus:
    """Draw one split; train uses seen stems only, other splits draw unseen stems at ``oov_rate``."""
    config.validate()
    if split not in {"train", "validation", "test"}:
        raise InvalidConfig(f"unknown synthetic split {split!r}", path="split")
    streams = _streams(seed)
    gazetteer = _build_gazetteer(config, streams["gazetteer"])
    count = {"train": config.n_train, "validation": config.n_validation, "test": config.n_test}[split]
    if count == 0:
        raise InvalidConfig(f"split {split!r} has zero sentences configured", path=f"n_{split}")
    oov_rate = 0.0 if split == "train" else config.oov_rate
    return LabeledCorpus(tuple(_sentences(config, gazetteer, streams[split], count, oov_rate)), split)


def generate_splits(config: SynthConfig, seed: int) -> dict[str, LabeledCorpus]:
    splits = {"train": generate_synthetic(config, seed, "train"), "test": generate_synthetic(config, seed, "test")}
    if config.n_validation:
        splits["validation"] = generate_synthetic(config, seed, "validation")
    return splits


def synthetic_vocab(
    config: SynthConfig,
    seed: int,
    *,
    unk_token: str = "[UNK]",
    pad_token: str = "[PAD]",
    continuation_prefix: str = "##",
) -> list[str]:
    """WordPiece token list covering every stem, suffix and filler of the generator."""
    config.validate()
    gazetteer = _build_gazetteer(config, _streams(seed)["gazetteer"])
    letters = sorted(set(CONSONANTS + VOWELS + "".join(config.entity_suffixes())))
    tokens: list[str] = [pad_token, unk_token]
    tokens += letters
    tokens += [continuation_prefix + ch for ch in letters]
    syllables = _syllables()
    tokens += syllables
    tokens += [continuation_prefix + s for s in syllables]
    for name in config.classes:
        tokens += gazetteer.seen[name]
        tokens += gazetteer.unseen[name]
    tokens += [continuation_prefix + suffix for suffix in config.entity_suffixes()]
    tokens += gazetteer.fillers
    return list(dict.fromkeys(tokens))


def entity_stem(word: str, config: SynthConfig) -> str | None:
    for suffix in config.entity_suffixes():
        if word.endswith(suffix) and len(word) > len(suffix):
            return word[: -len(suffix)]
    return None


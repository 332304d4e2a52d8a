from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from subwordner.corpus import LabeledCorpus
from subwordner.errors import (
    DuplicateToken,
    EmptyCorpus,
    InvalidConfig,
    InvariantViolation,
    LengthMismatch,
    MissingSegmentation,
    MissingSpecial,
)
from subwordner.files import read_text, write_text_atomic
from subwordner.rules import SegmentationMode, normalize_mode


logger = logging.getLogger(__name__)

DEFAULT_UNK = "[UNK]"
DEFAULT_PAD = "[PAD]"
CONTINUATION_PREFIX = "##"
MAX_WORD_CHARS = 100


@dataclass(frozen=True)
class Vocab:
    token_of: tuple[str, ...]
    unk_token: str = DEFAULT_UNK
    pad_token: str = DEFAULT_PAD
    continuation_prefix: str = CONTINUATION_PREFIX
    max_word_chars: int = MAX_WORD_CHARS
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_of", tuple(self.token_of))
        object.__setattr__(self, "id_of", {token: i for i, token in enumerate(self.token_of)})

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: object) -> bool:
        return token in self.id_of

    @property
    def unk_id(self) -> int:
        return self.id_of[self.unk_token]

    @property
    def pad_id(self) -> int:
        return self.id_of[self.pad_token]

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, self.unk_id)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for token in self.token_of:
            digest.update(token.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()

    def settings(self) -> dict[str, object]:
        return {
            "unk_token": self.unk_token,
            "pad_token": self.pad_token,
            "continuation_prefix": self.continuation_prefix,
            "max_word_chars": self.max_word_chars,
        }


@dataclass(frozen=True)
class SubwordEncoding:
    subtokens: tuple[str, ...]
    ids: tuple[int, ...]
    word_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subtokens", tuple(self.subtokens))
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "word_ids", tuple(int(i) for i in self.word_ids))

    def __len__(self) -> int:
        return len(self.subtokens)

    @property
    def word_count(self) -> int:
        return self.word_ids[-1] + 1 if self.word_ids else 0

    def word_spans(self) -> list[tuple[int, int]]:
        """(start, end) subtoken range of every source word."""
        spans: list[tuple[int, int]] = []
        start = 0
        for pos in range(1, len(self.word_ids) + 1):
            if pos == len(self.word_ids) or self.word_ids[pos] != self.word_ids[start]:
                spans.append((start, pos))
                start = pos
        return spans


@dataclass(frozen=True)
class FertilityStats:
    words_total: int
    subtokens_total: int
    fertility: float
    unk_words: int
    unk_word_rate: float
    length_histogram: dict[int, int]
    pieces_histogram: dict[int, int]

    def to_dict(self) -> dict[str, object]:
        return {
            "words_total": self.words_total,
            "subtokens_total": self.subtokens_total,
            "fertility": self.fertility,
            "unk_words": self.unk_words,
            "unk_word_rate": self.unk_word_rate,
            "length_histogram": {str(k): v for k, v in self.length_histogram.items()},
            "pieces_histogram": {str(k): v for k, v in self.pieces_histogram.items()},
        }


def vocab_from_tokens(
    tokens: Iterable[str],
    *,
    unk_token: str = DEFAULT_UNK,
    pad_token: str = DEFAULT_PAD,
    continuation_prefix: str = CONTINUATION_PREFIX,
    max_word_chars: int = MAX_WORD_CHARS,
    path: str = "",
) -> Vocab:
    seen: dict[str, int] = {}
    ordered: list[str] = []
    for line_no, token in enumerate(tokens, start=1):
        if token in seen:
            raise DuplicateToken(token, line_no, first_line=seen[token], path=path)
        seen[token] = line_no
        ordered.append(token)
    for special in (unk_token, pad_token):
        if special not in seen:
            raise MissingSpecial(special, path=path)
    return Vocab(
        tuple(ordered),
        unk_token=unk_token,
        pad_token=pad_token,
        continuation_prefix=continuation_prefix,
        max_word_chars=max_word_chars,
    )


def load_vocab(
    path: str | Path,
    unk_token: str = DEFAULT_UNK,
    pad_token: str = DEFAULT_PAD,
    continuation_prefix: str = CONTINUATION_PREFIX,
    max_word_chars: int = MAX_WORD_CHARS,
) -> Vocab:
    text = read_text(path)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    vocab = vocab_from_tokens(
        (line.rstrip("\r") for line in lines),
        unk_token=unk_token,
        pad_token=pad_token,
        continuation_prefix=continuation_prefix,
        max_word_chars=max_word_chars,
        path=str(path),
    )
    logger.debug("Loaded %d tokens from %s", len(vocab), path)
    return vocab


def write_vocab(vocab: Vocab, path: str | Path) -> Path:
    return write_text_atomic(path, "".join(f"{token}\n" for token in vocab.token_of))


def build_word_vocab(
    corpus: LabeledCorpus,
    min_freq: int = 1,
    *,
    unk_token: str = DEFAULT_UNK,
    pad_token: str = DEFAULT_PAD,
) -> Vocab:
    if not corpus.sentences:
        raise EmptyCorpus()
    if min_freq < 1:
        raise InvalidConfig("min_freq must be >= 1", path="min_freq", actual=str(min_freq))
    counts: Counter[str] = Counter()
    for sentence in corpus.sentences:
        counts.update(sentence.words)
    # Counter keeps first-occurrence order.
    tokens = [pad_token, unk_token] + [word for word, n in counts.items() if n >= min_freq]
    return Vocab(tuple(dict.fromkeys(tokens)), unk_token=unk_token, pad_token=pad_token)


def wordpiece_word(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first segmentation; any dead end maps the whole word to UNK."""
    if len(word) > vocab.max_word_chars:
        return [vocab.unk_token]

    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = vocab.continuation_prefix + candidate
            if candidate in vocab.id_of:
                match = candidate
                break
            end -= 1
        if match is None:
            return [vocab.unk_token]
        pieces.append(match)
        start = end
    return pieces


def segment_sentence(
    words: Sequence[str],
    vocab: Vocab,
    mode: str | SegmentationMode = SegmentationMode.SUBWORD,
) -> SubwordEncoding:
    mode = normalize_mode(mode)
    if mode is SegmentationMode.WORD:
        return SubwordEncoding(tuple(words), tuple(vocab.lookup(w) for w in words), tuple(range(len(words))))
    if mode is not SegmentationMode.SUBWORD:
        raise ValueError("segment_sentence handles word and subword modes only")
    subtokens: list[str] = []
    word_ids: list[int] = []
    for index, word in enumerate(words):
        pieces = wordpiece_word(word, vocab)
        subtokens.extend(pieces)
        word_ids.extend([index] * len(pieces))
    return SubwordEncoding(tuple(subtokens), tuple(vocab.id_of[p] for p in subtokens), tuple(word_ids))


def encoding_problem(encoding: SubwordEncoding, word_count: int | None = None) -> str | None:
    """Return the first broken invariant of ``encoding``, or None."""
    n = len(encoding.subtokens)
    if len(encoding.ids) != n or len(encoding.word_ids) != n:
        return f"field lengths differ: subtokens={n}, ids={len(encoding.ids)}, word_ids={len(encoding.word_ids)}"
    previous = -1
    for pos, word_id in enumerate(encoding.word_ids):
        if word_id < previous:
            return f"word_ids not non-decreasing at position {pos} ({previous} -> {word_id})"
        if word_id > previous + 1:
            return f"word index {previous + 1} has no subtoken (jump to {word_id} at position {pos})"
        previous = word_id
    if word_count is not None and encoding.word_count != word_count:
        return f"encoding covers {encoding.word_count} words, sentence has {word_count}"
    return None


def load_external_segmentation(path: str | Path) -> list[SubwordEncoding]:
    """Read one JSON record per line with ``subtokens``, ``ids`` and ``word_ids`` arrays."""
    encodings: list[SubwordEncoding] = []
    sentence_no = 0
    for raw in read_text(path).split("\n"):
        if not raw.strip():
            continue
        sentence_no += 1
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InvariantViolation(sentence_no, f"invalid JSON: {exc.msg}", path=str(path)) from exc
        if not isinstance(record, dict):
            raise InvariantViolation(sentence_no, "record must be an object", path=str(path))
        for key in ("subtokens", "ids", "word_ids"):
            if not isinstance(record.get(key), list):
                raise InvariantViolation(sentence_no, f"missing list field {key!r}", path=str(path))
        if not all(isinstance(x, str) for x in record["subtokens"]):
            raise InvariantViolation(sentence_no, "subtokens must be strings", path=str(path))
        if not all(isinstance(x, int) for x in record["ids"] + record["word_ids"]):
            raise InvariantViolation(sentence_no, "ids and word_ids must be integers", path=str(path))
        encoding = SubwordEncoding(tuple(record["subtokens"]), tuple(record["ids"]), tuple(record["word_ids"]))
        problem = encoding_problem(encoding)
        if problem:
            raise InvariantViolation(sentence_no, problem, path=str(path))
        encodings.append(encoding)
    return encodings


class Segmenter:
    """WordPiece or word-level segmentation over one vocab."""

    def __init__(self, vocab: Vocab, mode: str | SegmentationMode = SegmentationMode.SUBWORD) -> None:
        self.vocab = vocab
        self.mode = normalize_mode(mode)
        if self.mode is SegmentationMode.EXTERNAL:
            raise ValueError("external segmentations need ExternalSegmenter")

    def encode(self, words: Sequence[str]) -> SubwordEncoding:
        return segment_sentence(words, self.vocab, self.mode)


class ExternalSegmenter:
    """Serves pre-computed segmentations, re-indexing pieces onto a compact vocab."""

    mode = SegmentationMode.EXTERNAL

    def __init__(self, vocab: Vocab, table: dict[tuple[str, ...], SubwordEncoding]) -> None:
        self.vocab = vocab
        self._table = table

    def encode(self, words: Sequence[str]) -> SubwordEncoding:
        found = self._table.get(tuple(words))
        if found is None:
            raise MissingSegmentation(
                "No external segmentation for sentence starting " + " ".join(words[:5]),
                expected="record in segmentation file",
                actual="absent",
            )
        return SubwordEncoding(found.subtokens, tuple(self.vocab.lookup(p) for p in found.subtokens), found.word_ids)

    def add(self, corpus: LabeledCorpus, encodings: Sequence[SubwordEncoding], *, path: str = "") -> None:
        self._table.update(pair_external(corpus, encodings, path=path))


def pair_external(
    corpus: LabeledCorpus,
    encodings: Sequence[SubwordEncoding],
    *,
    path: str = "",
) -> dict[tuple[str, ...], SubwordEncoding]:
    if len(encodings) != len(corpus.sentences):
        raise LengthMismatch(len(corpus.sentences), len(encodings), what=f"segmentation records in {path or 'file'}")
    table: dict[tuple[str, ...], SubwordEncoding] = {}
    for sentence_no, (sentence, encoding) in enumerate(zip(corpus.sentences, encodings), start=1):
        problem = encoding_problem(encoding, word_count=len(sentence.words))
        if problem:
            raise InvariantViolation(sentence_no, problem, path=path)
        table[sentence.words] = encoding
    return table


def external_vocab(
    encodings: Iterable[SubwordEncoding],
    *,
    unk_token: str = DEFAULT_UNK,
    pad_token: str = DEFAULT_PAD,
) -> Vocab:
    tokens = [pad_token, unk_token]
    for encoding in encodings:
        tokens.extend(encoding.subtokens)
    return Vocab(tuple(dict.fromkeys(tokens)), unk_token=unk_token, pad_token=pad_token, continuation_prefix="")


def fertility_from_encodings(encodings: Iterable[SubwordEncoding], unk_id: int | None = None) -> FertilityStats:
    words_total = 0
    subtokens_total = 0
    unk_words = 0
    lengths: Counter[int] = Counter()
    pieces: Counter[int] = Counter()
    for encoding in encodings:
        words_total += encoding.word_count
        subtokens_total += len(encoding)
        lengths[len(encoding)] += 1
        for start, end in encoding.word_spans():
            pieces[end - start] += 1
            if unk_id is not None and unk_id in encoding.ids[start:end]:
                unk_words += 1
    return FertilityStats(
        words_total=words_total,
        subtokens_total=subtokens_total,
        fertility=subtokens_total / words_total if words_total else 1.0,
        unk_words=unk_words,
        unk_word_rate=unk_words / words_total if words_total else 0.0,
        length_histogram=dict(sorted(lengths.items())),
        pieces_histogram=dict(sorted(pieces.items())),
    )


def fertility_stats(
    corpus: LabeledCorpus,
    vocab: Vocab,
    mode: str | SegmentationMode = SegmentationMode.SUBWORD,
) -> FertilityStats:
    segmenter = Segmenter(vocab, mode)
    return fertility_from_encodings((segmenter.encode(s.words) for s in corpus.sentences), vocab.unk_id)


def format_segmentation(words: Sequence[str], encoding: SubwordEncoding) -> str:
    """Render ``word -> piece piece`` groups for one sentence, continuation prefixes kept."""
    groups = []
    for start, end in encoding.word_spans():
        word = words[encoding.word_ids[start]]
        groups.append(f"{word} -> {' '.join(encoding.subtokens[start:end])}")
    return " | ".join(groups)

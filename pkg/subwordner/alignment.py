from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from subwordner.errors import InvalidConfig, LengthMismatch
from subwordner.rules import ClubbingStrategy, normalize_strategy
from subwordner.tokenizers import SubwordEncoding


DEFAULT_MAX_LEN = 128


def propagate_labels(tags: Sequence[str], encoding: SubwordEncoding) -> list[str]:
    """Copy each root word's label verbatim onto every one of its subtokens."""
    if len(tags) != encoding.word_count:
        raise LengthMismatch(encoding.word_count, len(tags), what="tags per source word")
    return [tags[word_id] for word_id in encoding.word_ids]


def club_labels(
    subtoken_tags: Sequence[str],
    encoding: SubwordEncoding,
    strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
) -> list[str]:
    """Collapse per-subtoken labels to one label per source word."""
    strategy = normalize_strategy(strategy)
    if len(subtoken_tags) != len(encoding.word_ids):
        raise LengthMismatch(len(encoding.word_ids), len(subtoken_tags), what="subtoken tags")

    clubbed: list[str] = []
    for start, end in encoding.word_spans():
        group = subtoken_tags[start:end]
        if strategy is ClubbingStrategy.FIRST:
            clubbed.append(group[0])
            continue
        counts = Counter(group)
        best = max(counts.values())
        # Earliest subtoken wins a tie.
        clubbed.append(next(label for label in group if counts[label] == best))
    return clubbed


@dataclass(frozen=True)
class PaddedRow:
    ids: np.ndarray
    label_indices: np.ndarray
    mask: np.ndarray
    kept: int
    truncated_words: int


@dataclass(frozen=True)
class PaddedBatch:
    ids: np.ndarray
    label_indices: np.ndarray
    mask: np.ndarray
    encodings: tuple[SubwordEncoding, ...]
    truncated_rows: tuple[int, ...]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def truncation_point(encoding: SubwordEncoding, max_len: int) -> int:
    """Largest prefix length <= max_len that ends on a word boundary."""
    if len(encoding) <= max_len:
        return len(encoding)
    cut = max_len
    boundary_word = encoding.word_ids[max_len]
    while cut > 0 and encoding.word_ids[cut - 1] == boundary_word:
        cut -= 1
    return cut


def pad_truncate(
    encoding: SubwordEncoding,
    label_indices: Sequence[int] | None,
    max_len: int,
    pad_id: int,
    pad_label_index: int = 0,
) -> PaddedRow:
    if max_len < 1:
        raise InvalidConfig("max_len must be >= 1", path="max_len", actual=str(max_len))
    if label_indices is not None and len(label_indices) != len(encoding):
        raise LengthMismatch(len(encoding), len(label_indices), what="subtoken label indices")

    kept = truncation_point(encoding, max_len)
    ids = np.full(max_len, pad_id, dtype=np.int64)
    labels = np.full(max_len, pad_label_index, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.int8)
    ids[:kept] = encoding.ids[:kept]
    if label_indices is not None:
        labels[:kept] = label_indices[:kept]
    mask[:kept] = 1
    dropped_words = encoding.word_count - (encoding.word_ids[kept - 1] + 1 if kept else 0)
    return PaddedRow(ids=ids, label_indices=labels, mask=mask, kept=kept, truncated_words=dropped_words)


def build_batch(
    encodings: Sequence[SubwordEncoding],
    label_rows: Sequence[Sequence[int]] | None,
    max_len: int,
    pad_id: int,
    pad_label_index: int = 0,
) -> PaddedBatch:
    """Pad/truncate every row to ``max_len`` and drop columns no row uses."""
    rows = [
        pad_truncate(enc, None if label_rows is None else label_rows[i], max_len, pad_id, pad_label_index)
        for i, enc in enumerate(encodings)
    ]
    width = max([row.kept for row in rows] + [1])
    return PaddedBatch(
        ids=np.stack([row.ids[:width] for row in rows]),
        label_indices=np.stack([row.label_indices[:width] for row in rows]),
        mask=np.stack([row.mask[:width] for row in rows]),
        encodings=tuple(encodings),
        truncated_rows=tuple(i for i, row in enumerate(rows) if row.truncated_words),
    )

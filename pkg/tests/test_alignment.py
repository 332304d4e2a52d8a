from __future__ import annotations

import numpy as np
import pytest

from subwordner.alignment import build_batch, club_labels, pad_truncate, propagate_labels, truncation_point
from subwordner.errors import InvalidConfig, LengthMismatch
from subwordner.tokenizers import SubwordEncoding


def _encoding(word_ids: list[int]) -> SubwordEncoding:
    return SubwordEncoding(tuple(f"t{i}" for i in range(len(word_ids))), tuple(range(2, 2 + len(word_ids))), tuple(word_ids))


def _random_encoding(rng: np.random.Generator, words: int) -> SubwordEncoding:
    word_ids: list[int] = []
    for word in range(words):
        word_ids.extend([word] * int(rng.integers(1, 5)))
    return _encoding(word_ids)


def test_propagate_copies_root_label_verbatim() -> None:
    assert propagate_labels(["B-NEL", "O"], _encoding([0, 0, 1])) == ["B-NEL", "B-NEL", "O"]
    assert propagate_labels(["B-NEL", "O"], _encoding([0, 1])) == ["B-NEL", "O"]
    assert propagate_labels([], _encoding([])) == []


def test_propagate_rejects_tag_count_mismatch() -> None:
    with pytest.raises(LengthMismatch):
        propagate_labels(["O"], _encoding([0, 1]))


def test_club_first_and_majority() -> None:
    assert club_labels(["B-NEL", "O", "O"], _encoding([0, 0, 1]), "first") == ["B-NEL", "O"]
    assert club_labels(["O", "B-NEL", "B-NEL"], _encoding([0, 0, 0]), "majority") == ["B-NEL"]


def test_club_majority_tie_goes_to_earliest_subtoken() -> None:
    assert club_labels(["B-NEL", "O"], _encoding([0, 0]), "majority") == ["B-NEL"]
    assert club_labels(["O", "B-NEL", "B-NEL", "O"], _encoding([0, 0, 0, 0]), "majority") == ["O"]


def test_club_rejects_length_mismatch() -> None:
    with pytest.raises(LengthMismatch):
        club_labels(["O"], _encoding([0, 0]))


def test_propagate_then_club_round_trip() -> None:
    rng = np.random.default_rng(99)
    labels = ["O", "B-NEL", "I-NEL", "B-NEP", "NEO"]
    for _ in range(1000):
        words = int(rng.integers(1, 12))
        encoding = _random_encoding(rng, words)
        tags = [labels[int(i)] for i in rng.integers(0, len(labels), size=words)]
        propagated = propagate_labels(tags, encoding)

        assert len(propagated) == len(encoding)
        for strategy in ("first", "majority"):
            assert club_labels(propagated, encoding, strategy) == tags


def test_pad_truncate_pads_and_masks() -> None:
    row = pad_truncate(_encoding([0, 1]), [1, 2], max_len=4, pad_id=0)

    assert row.mask.tolist() == [1, 1, 0, 0]
    assert row.ids.tolist() == [2, 3, 0, 0]
    assert row.label_indices.tolist() == [1, 2, 0, 0]


def test_pad_truncate_identity_at_exact_length() -> None:
    row = pad_truncate(_encoding([0, 1, 2, 3, 4]), None, max_len=5, pad_id=0)

    assert row.mask.tolist() == [1] * 5
    assert row.kept == 5
    assert row.truncated_words == 0


def test_pad_truncate_cuts_at_word_boundary() -> None:
    encoding = _encoding([0, 1, 2, 3, 3, 3])
    row = pad_truncate(encoding, None, max_len=4, pad_id=0)

    assert truncation_point(encoding, 4) == 3
    assert row.mask.tolist() == [1, 1, 1, 0]
    assert row.truncated_words == 1


def test_pad_truncate_rejects_zero_length() -> None:
    with pytest.raises(InvalidConfig):
        pad_truncate(_encoding([0]), None, max_len=0, pad_id=0)


def test_truncation_never_splits_a_word() -> None:
    rng = np.random.default_rng(3)
    for _ in range(300):
        encoding = _random_encoding(rng, int(rng.integers(1, 10)))
        max_len = int(rng.integers(1, 20))
        cut = truncation_point(encoding, max_len)
        assert cut <= max_len
        if 0 < cut < len(encoding):
            assert encoding.word_ids[cut - 1] != encoding.word_ids[cut]


def test_build_batch_trims_to_longest_kept_row() -> None:
    batch = build_batch([_encoding([0, 0, 1]), _encoding([0]), _encoding([0, 1, 2, 2, 2])], None, max_len=4, pad_id=0)

    assert batch.ids.shape == (3, 3)
    assert batch.lengths.tolist() == [3, 1, 2]
    assert batch.truncated_rows == (2,)

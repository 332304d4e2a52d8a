from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from subwordner.corpus import LabeledCorpus, LabeledSentence  # noqa: E402
from subwordner.tokenizers import Vocab, vocab_from_tokens  # noqa: E402


TOY_SENTENCES = [
    ("ram went to pune", "B-NEP O O B-NEL"),
    ("sita lives in mumbai", "B-NEP O O B-NEL"),
    ("tata opened in pune", "B-NEO O O B-NEL"),
    ("ram met sita", "B-NEP O B-NEP"),
    ("infosys hired ram", "B-NEO O B-NEP"),
    ("mumbai is big", "B-NEL O O"),
    ("sita went to tata", "B-NEP O O B-NEO"),
    ("pune is green", "B-NEL O O"),
    ("infosys opened in mumbai", "B-NEO O O B-NEL"),
    ("ram lives in pune", "B-NEP O O B-NEL"),
]


def make_corpus(rows: list[tuple[str, str]], split_name: str = "train") -> LabeledCorpus:
    return LabeledCorpus(
        tuple(LabeledSentence(tuple(words.split()), tuple(tags.split())) for words, tags in rows),
        split_name,
    )


@pytest.fixture
def toy_corpus() -> LabeledCorpus:
    return make_corpus(TOY_SENTENCES)


@pytest.fixture
def tiny_vocab() -> Vocab:
    return vocab_from_tokens(["[PAD]", "[UNK]", "pu", "##ne", "madhye", "city", "mum", "##bai", "ram", "##a", "##n"])


@pytest.fixture
def devanagari_vocab() -> Vocab:
    return vocab_from_tokens(["[PAD]", "[UNK]", "पुणे", "##कर", "मुंबई", "##त", "राम"])

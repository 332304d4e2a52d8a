from __future__ import annotations

import numpy as np
import pytest

from subwordner.corpus import (
    LabeledCorpus,
    LabeledSentence,
    SynthConfig,
    build_label_set,
    corpus_stats,
    entity_stem,
    generate_splits,
    generate_synthetic,
    parse_conll,
    read_conll,
    save_conll,
    synthetic_vocab,
    write_conll,
)
from subwordner.errors import EmptyCorpus, InvalidConfig, MalformedLine
from subwordner.tokenizers import Segmenter, vocab_from_tokens


def _small_config(**overrides: object) -> SynthConfig:
    values: dict = {"stems_per_class": 8, "n_train": 40, "n_validation": 10, "n_test": 20, "fillers": 30}
    values.update(overrides)
    return SynthConfig(**values)


def _random_corpus(rng: np.random.Generator, sentences: int) -> LabeledCorpus:
    alphabet = list("abcdeपुणे")
    labels = ["O", "B-NEL", "I-NEL", "B-NEP"]
    out = []
    for _ in range(sentences):
        n = int(rng.integers(1, 8))
        words = tuple("".join(rng.choice(alphabet, size=int(rng.integers(1, 6)))) for _ in range(n))
        tags = tuple(labels[int(i)] for i in rng.integers(0, len(labels), size=n))
        out.append(LabeledSentence(words, tags))
    return LabeledCorpus(tuple(out))


def test_parse_conll_reads_one_sentence() -> None:
    corpus = parse_conll("a\tO\nb\tB-NEL\n\n")

    assert len(corpus) == 1
    assert corpus.sentences[0].words == ("a", "b")
    assert corpus.sentences[0].tags == ("O", "B-NEL")


def test_parse_conll_rejects_empty_text() -> None:
    with pytest.raises(EmptyCorpus):
        parse_conll("")


def test_parse_conll_reports_malformed_line_number() -> None:
    with pytest.raises(MalformedLine) as info:
        parse_conll("a b O\n")

    assert info.value.line_no == 1
    assert info.value.to_issue().issueType == "MALFORMED_LINE"


def test_parse_conll_accepts_missing_trailing_blank_and_extra_blanks() -> None:
    corpus = parse_conll("a\tO\n\n\n\nb\tB-NEL\nc\tO")

    assert [s.words for s in corpus.sentences] == [("a",), ("b", "c")]


def test_write_conll_format() -> None:
    corpus = LabeledCorpus((LabeledSentence(("a",), ("O",)),))

    assert write_conll(corpus) == "a\tO\n\n"


def test_parse_write_round_trip_on_random_corpora() -> None:
    rng = np.random.default_rng(7)
    for _ in range(20):
        corpus = _random_corpus(rng, 5)
        assert parse_conll(write_conll(corpus)) == corpus


def test_round_trip_on_synthetic_sentences(tmp_path) -> None:
    corpus = generate_synthetic(_small_config(n_train=100), seed=3)
    path = save_conll(corpus, tmp_path / "train.conll")

    assert read_conll(path, "train") == corpus


def test_labeled_sentence_rejects_whitespace_and_length_mismatch() -> None:
    with pytest.raises(ValueError):
        LabeledSentence(("a b",), ("O",))
    with pytest.raises(ValueError):
        LabeledSentence(("a",), ("O", "O"))


def test_corpus_stats_counts_non_outside_tags() -> None:
    corpus = parse_conll("a\tO\nb\tO\n\nc\tB-NEL\nd\tO\ne\tB-NEP\n\n")
    stats = corpus_stats(corpus)

    assert stats.sentence_count == 2
    assert stats.token_count == 5
    assert stats.tag_count == 2
    assert stats.per_label_counts == {"B-NEL": 1, "B-NEP": 1, "O": 3}
    assert stats.tag_count == sum(n for label, n in stats.per_label_counts.items() if label != "O")


def test_corpus_stats_all_outside() -> None:
    assert corpus_stats(parse_conll("a\tO\nb\tO\n")).tag_count == 0


def test_build_label_set_orders_outside_first_then_sorted() -> None:
    corpus = parse_conll("a\tB-NEP\nb\tO\nc\tB-NEL\n")
    labels = build_label_set(corpus)

    assert labels.labels == ("O", "B-NEL", "B-NEP")
    assert [labels.index(label) for label in labels.labels] == [0, 1, 2]
    assert build_label_set(corpus) == labels


def test_build_label_set_outside_only() -> None:
    assert build_label_set(parse_conll("a\tO\n")).labels == ("O",)


def test_generate_synthetic_is_reproducible() -> None:
    config = _small_config()

    assert write_conll(generate_synthetic(config, 5)) == write_conll(generate_synthetic(config, 5))
    assert write_conll(generate_synthetic(config, 5)) != write_conll(generate_synthetic(config, 6))


def test_generate_synthetic_suffix_decides_class() -> None:
    config = _small_config()
    corpus = generate_synthetic(config, 11, "test")
    for sentence in corpus.sentences:
        for word, tag in sentence.pairs():
            if word.endswith("pur"):
                assert tag == "B-NEL"
            if tag != "O":
                suffix_class = next(
                    name for name in config.classes if any(word.endswith(s) for s in config.suffixes[name])
                )
                assert tag == f"B-{suffix_class}"


def test_full_oov_rate_keeps_test_stems_out_of_train() -> None:
    config = _small_config(oov_rate=1.0)
    splits = generate_splits(config, 2)

    def stems(corpus: LabeledCorpus) -> set[str]:
        return {
            entity_stem(word, config)
            for sentence in corpus.sentences
            for word, tag in sentence.pairs()
            if tag != "O"
        }

    assert stems(splits["test"])
    assert not stems(splits["test"]) & stems(splits["train"])


def test_synthetic_config_rejects_empty_inventories() -> None:
    with pytest.raises(InvalidConfig):
        generate_synthetic(_small_config(stems_per_class=0), 1)
    with pytest.raises(InvalidConfig):
        generate_synthetic(_small_config(suffixes={"NEL": (), "NEP": ("rao",), "NEO": ("dal",)}), 1)


def test_synthetic_vocab_segments_entities_into_stem_and_suffix() -> None:
    config = _small_config()
    vocab = vocab_from_tokens(synthetic_vocab(config, 4))
    segmenter = Segmenter(vocab)
    corpus = generate_synthetic(config, 4, "test")
    for sentence in corpus.sentences:
        encoding = segmenter.encode(sentence.words)
        assert vocab.unk_id not in encoding.ids
        for (start, end), (word, tag) in zip(encoding.word_spans(), sentence.pairs()):
            if tag != "O":
                assert encoding.subtokens[start:end] == (entity_stem(word, config), "##" + word[len(entity_stem(word, config)):])


def test_unicode_words_survive_round_trip() -> None:
    text = "पुणेकर\tB-NEP\nमुंबईत\tB-NEL\n\n"

    assert write_conll(parse_conll(text)) == text

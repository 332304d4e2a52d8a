from __future__ import annotations

import numpy as np
import pytest

from subwordner.corpus import LabeledCorpus, build_label_set
from subwordner.errors import LabelMismatch, LengthMismatch, UnknownScheme
from subwordner.metrics import (
    decode_spans,
    encode_spans,
    evaluate,
    score_sentences,
    span_confusion,
    token_confusion,
    token_metrics,
)
from subwordner.taggers import Hyperparams, build_model
from subwordner.tokenizers import Segmenter, build_word_vocab

from conftest import make_corpus

LABELS = ["O", "B-NEL", "I-NEL", "B-NEP", "I-NEP", "B-NEO"]


def _brute_force(pred: list[str], gold: list[str]) -> dict[str, tuple[float, float, float]]:
    out = {}
    for label in sorted(set(pred) | set(gold)):
        if label == "O":
            continue
        tp = sum(1 for p, g in zip(pred, gold) if p == label and g == label)
        predicted = sum(1 for p in pred if p == label)
        actual = sum(1 for g in gold if g == label)
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[label] = (precision, recall, f1)
    return out


def test_token_metrics_match_brute_force_recount() -> None:
    rng = np.random.default_rng(17)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        gold = [LABELS[int(i)] for i in rng.integers(0, len(LABELS), size=n)]
        pred = [LABELS[int(i)] for i in rng.integers(0, len(LABELS), size=n)]
        metrics = token_metrics(token_confusion(pred, gold))
        expected = _brute_force(pred, gold)

        assert set(metrics.per_class) == set(expected)
        for label, (p, r, f) in expected.items():
            scores = metrics.per_class[label]
            assert (scores.precision, scores.recall, scores.f1) == (p, r, f)
        assert metrics.accuracy == sum(1 for p, g in zip(pred, gold) if p == g) / n


def test_token_confusion_hand_counts() -> None:
    counts = token_confusion(["B-NEL", "O"], ["B-NEL", "B-NEL"])

    assert (counts.tp["B-NEL"], counts.fn["B-NEL"], counts.fp["B-NEL"]) == (1, 1, 0)
    metrics = token_metrics(counts)
    assert metrics.per_class["B-NEL"].precision == 1.0
    assert metrics.per_class["B-NEL"].recall == 0.5
    assert metrics.per_class["B-NEL"].f1 == pytest.approx(2 / 3)


def test_perfect_predictions_score_one() -> None:
    gold = ["B-NEL", "O", "B-NEP", "I-NEP"]
    metrics = token_metrics(token_confusion(gold, gold))

    assert metrics.accuracy == 1.0
    assert metrics.macro.f1 == metrics.micro.f1 == 1.0
    assert all(scores.f1 == 1.0 for scores in metrics.per_class.values())


def test_all_outside_predictions() -> None:
    gold = ["B-NEL", "O", "O", "B-NEP", "O"]
    metrics = token_metrics(token_confusion(["O"] * 5, gold))

    assert metrics.micro.recall == 0.0
    assert metrics.macro.f1 == 0.0
    assert metrics.accuracy == pytest.approx(3 / 5)


def test_macro_over_empty_gold_is_flagged() -> None:
    metrics = token_metrics(token_confusion(["O", "B-NEL"], ["O", "O"]))

    assert metrics.macro_empty
    assert metrics.macro.f1 == 0.0


def test_micro_over_single_class_equals_class_f1() -> None:
    rng = np.random.default_rng(4)
    for _ in range(100):
        gold = [["O", "B-NEL"][int(i)] for i in rng.integers(0, 2, size=12)]
        pred = [["O", "B-NEL"][int(i)] for i in rng.integers(0, 2, size=12)]
        metrics = token_metrics(token_confusion(pred, gold))
        if "B-NEL" in metrics.per_class:
            assert metrics.micro.f1 == metrics.per_class["B-NEL"].f1


def test_token_confusion_rejects_length_mismatch() -> None:
    with pytest.raises(LengthMismatch):
        token_confusion(["O"], ["O", "O"])


def test_decode_spans_examples() -> None:
    assert decode_spans(["B-NEL", "I-NEL", "O"], "bio") == [("NEL", 0, 2)]
    assert decode_spans(["I-NEL"], "bio") == [("NEL", 0, 1)]
    assert decode_spans(["NEL", "NEL", "NEP"], "flat") == [("NEL", 0, 2), ("NEP", 2, 3)]
    assert decode_spans(["B-NEL", "B-NEL", "I-NEP"], "bio") == [("NEL", 0, 1), ("NEL", 1, 2), ("NEP", 2, 3)]


def test_decode_spans_rejects_unknown_scheme() -> None:
    with pytest.raises(UnknownScheme):
        decode_spans(["O"], "iobes")


def test_decode_then_encode_reproduces_repaired_labels() -> None:
    rng = np.random.default_rng(8)
    for _ in range(300):
        labels = [LABELS[int(i)] for i in rng.integers(0, len(LABELS), size=int(rng.integers(0, 15)))]
        spans = decode_spans(labels, "bio")
        repaired = encode_spans(spans, len(labels), "bio")

        assert decode_spans(repaired, "bio") == spans
        assert encode_spans(decode_spans(repaired, "bio"), len(labels), "bio") == repaired


def test_span_confusion_requires_exact_boundaries() -> None:
    counts = span_confusion(["B-NEL", "O", "B-NEP"], ["B-NEL", "I-NEL", "B-NEP"], "bio")

    assert counts.tp["NEP"] == 1
    assert counts.fp["NEL"] == 1
    assert counts.fn["NEL"] == 1


def test_score_sentences_is_order_invariant() -> None:
    rng = np.random.default_rng(21)
    gold = [[LABELS[int(i)] for i in rng.integers(0, len(LABELS), size=6)] for _ in range(20)]
    pred = [[LABELS[int(i)] for i in rng.integers(0, len(LABELS), size=6)] for _ in range(20)]
    report = score_sentences(gold, pred, scheme="bio")
    order = rng.permutation(20)
    shuffled = score_sentences([gold[i] for i in order], [pred[i] for i in order], scheme="bio")

    assert report.to_dict() == shuffled.to_dict()


def test_evaluate_all_outside_model_has_zero_macro_f1(toy_corpus) -> None:
    vocab = build_word_vocab(toy_corpus)
    labels = build_label_set(toy_corpus)
    model = build_model("cnn", Hyperparams(embed_dim=8, conv_filters=8), vocab, labels)
    model.dense.params["w"][...] = 0.0
    model.dense.params["b"][...] = 0.0
    model.dense.params["b"][labels.index("O")] = 1.0

    report = evaluate(model, toy_corpus, Segmenter(vocab, "word"), scheme="bio")
    assert report.macro.f1 == 0.0
    assert report.subtoken_accuracy == report.accuracy
    assert report.fertility is not None and report.fertility.fertility == 1.0
    assert report.token_count == sum(len(s) for s in toy_corpus.sentences)


def test_evaluate_rejects_unknown_labels(toy_corpus) -> None:
    vocab = build_word_vocab(toy_corpus)
    model = build_model("cnn", Hyperparams(embed_dim=8, conv_filters=8), vocab, build_label_set(toy_corpus))
    other: LabeledCorpus = make_corpus([("ram", "B-NEW")], "test")

    with pytest.raises(LabelMismatch):
        evaluate(model, other, Segmenter(vocab, "word"))

from __future__ import annotations

import hashlib
import struct

import numpy as np
import pytest

from subwordner.alignment import build_batch
from subwordner.corpus import LabeledCorpus, LabelSet, build_label_set
from subwordner.errors import CorruptCheckpoint, EmptySplit, InvalidHyper, LabelMismatch, VersionMismatch
from subwordner.metrics import evaluate
from subwordner.nn import softmax
from subwordner.taggers import (
    Hyperparams,
    TrainConfig,
    build_model,
    checkpoint_bytes,
    count_params,
    load_checkpoint,
    model_from_bytes,
    predict_sentence,
    save_checkpoint,
    train,
)
from subwordner.tokenizers import Segmenter, build_word_vocab, vocab_from_tokens

from conftest import make_corpus

SMALL = Hyperparams(embed_dim=16, conv_filters=32, lstm_hidden=16, bilstm_hidden=16, seed=3)


def _word_setup(corpus: LabeledCorpus, arch: str, hyper: Hyperparams = SMALL):
    vocab = build_word_vocab(corpus)
    model = build_model(arch, hyper, vocab, build_label_set(corpus), mode="word")
    return model, Segmenter(vocab, "word")


def _thousand_word_vocab():
    return vocab_from_tokens(["[PAD]", "[UNK]"] + [f"w{i}" for i in range(998)])


def _eight_labels() -> LabelSet:
    return LabelSet(("O", "B-NEL", "B-NEO", "B-NEP", "I-NEL", "I-NEO", "I-NEP", "NEM"))


def test_count_params_cnn_closed_form() -> None:
    model = build_model("cnn", Hyperparams(), _thousand_word_vocab(), _eight_labels())

    assert count_params(model) == 765_608
    assert model.dense.params["b"].shape == (8,)


def test_count_params_lstm_closed_form() -> None:
    model = build_model("lstm", Hyperparams(), _thousand_word_vocab(), _eight_labels())

    assert count_params(model) == 1_968_744


def test_count_params_matches_declared_shapes() -> None:
    model = build_model("bilstm", Hyperparams(), _thousand_word_vocab(), _eight_labels())
    h, d = 512, 300
    expected = 1000 * d + 2 * (d * 4 * h + h * 4 * h + 4 * h) + (2 * h * 8 + 8)

    assert model.encoder_width == 1024
    assert count_params(model) == expected


def test_build_model_is_deterministic_per_seed(toy_corpus) -> None:
    first, _ = _word_setup(toy_corpus, "bilstm")
    second, _ = _word_setup(toy_corpus, "bilstm")
    other = build_model("bilstm", SMALL, first.vocab, first.labels, seed=99, mode="word")

    for name, value in first.parameters().items():
        assert np.array_equal(value, second.parameters()[name])
    assert not np.array_equal(first.parameters()["embedding.table"], other.parameters()["embedding.table"])


def test_build_model_rejects_invalid_hyperparams(toy_corpus) -> None:
    vocab = build_word_vocab(toy_corpus)
    labels = build_label_set(toy_corpus)

    with pytest.raises(InvalidHyper):
        build_model("cnn", Hyperparams(conv_kernel=4), vocab, labels)
    with pytest.raises(InvalidHyper):
        build_model("lstm", Hyperparams(embed_dim=0), vocab, labels)


def test_probabilities_sum_to_one(toy_corpus) -> None:
    for arch in ("cnn", "lstm", "bilstm"):
        model, segmenter = _word_setup(toy_corpus, arch)
        probs = model.probabilities(segmenter.encode(toy_corpus.sentences[0].words))
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_batched_logits_match_single_sentence(toy_corpus) -> None:
    for arch in ("cnn", "lstm", "bilstm"):
        model, segmenter = _word_setup(toy_corpus, arch)
        encodings = [segmenter.encode(s.words) for s in toy_corpus.sentences[:4]]
        batch = build_batch(encodings, None, 16, model.vocab.pad_id)
        batched = softmax(model.forward(batch.ids, batch.mask))
        for row, encoding in enumerate(encodings):
            assert np.allclose(batched[row, : len(encoding)], model.probabilities(encoding), atol=1e-12)


def _overfit(corpus: LabeledCorpus, arch: str, epochs: int) -> float:
    model, segmenter = _word_setup(corpus, arch)
    config = TrainConfig(epochs=epochs, batch_size=2, learning_rate=0.01, patience=epochs, seed=1)
    model, _ = train(model, corpus, corpus, segmenter, config)
    return evaluate(model, corpus, segmenter).accuracy


def test_cnn_overfits_toy_corpus_within_50_epochs(toy_corpus) -> None:
    assert _overfit(toy_corpus, "cnn", 50) == 1.0


def test_lstm_and_bilstm_overfit_toy_corpus_within_100_epochs(toy_corpus) -> None:
    assert _overfit(toy_corpus, "lstm", 100) == 1.0
    assert _overfit(toy_corpus, "bilstm", 100) == 1.0


def test_training_is_reproducible(toy_corpus) -> None:
    config = TrainConfig(epochs=3, batch_size=3, learning_rate=0.01, seed=5)
    runs = []
    for _ in range(2):
        model, segmenter = _word_setup(toy_corpus, "cnn")
        runs.append(train(model, toy_corpus, toy_corpus, segmenter, config))

    (first, first_history), (second, second_history) = runs
    assert first_history.train_loss == second_history.train_loss
    assert first_history.lines() == second_history.lines()
    assert checkpoint_bytes(first) == checkpoint_bytes(second)


def test_training_without_validation_keeps_last_epoch(toy_corpus, caplog) -> None:
    model, segmenter = _word_setup(toy_corpus, "cnn")
    _, history = train(model, toy_corpus, None, segmenter, TrainConfig(epochs=2, batch_size=4))

    assert history.epochs_run == 2
    assert history.best_epoch is None
    assert history.val_macro_f1 == [None, None]
    assert any("early stopping disabled" in record.message for record in caplog.records)


def test_train_rejects_empty_split_and_unknown_labels(toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "cnn")

    with pytest.raises(EmptySplit):
        train(model, LabeledCorpus((), "train"), None, segmenter, TrainConfig(epochs=1))
    with pytest.raises(LabelMismatch):
        train(model, toy_corpus, make_corpus([("ram", "B-NEW")], "validation"), segmenter, TrainConfig(epochs=1))


def test_predict_sentence_returns_one_label_per_word(tiny_vocab) -> None:
    corpus = make_corpus([("pune madhye ram city mumbai", "B-NEL O B-NEP O B-NEL")])
    model = build_model("cnn", SMALL, tiny_vocab, build_label_set(corpus))
    segmenter = Segmenter(tiny_vocab)
    words = ["pune", "madhye", "raman", "city", "mumbai"]

    assert len(segmenter.encode(words)) > len(words)
    for strategy in ("first", "majority"):
        assert [w for w, _ in predict_sentence(model, words, segmenter, strategy)] == words


def test_untrained_model_with_equal_logits_predicts_first_label(toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "bilstm")
    model.dense.params["w"][...] = 0.0
    model.dense.params["b"][...] = 0.0

    pairs = predict_sentence(model, ["ram", "went", "to", "nowhere", "pune"], segmenter)
    assert [label for _, label in pairs] == [model.labels.label(0)] * 5


def test_predict_sentence_rejects_empty_words(toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "cnn")

    with pytest.raises(ValueError):
        predict_sentence(model, [], segmenter)


def test_checkpoint_round_trip_is_bit_identical(tmp_path, toy_corpus) -> None:
    hyper = Hyperparams(embed_dim=8, conv_filters=8, lstm_hidden=8, bilstm_hidden=8, dtype="float32")
    for arch in ("cnn", "lstm", "bilstm"):
        model, segmenter = _word_setup(toy_corpus, arch, hyper)
        path = save_checkpoint(model, tmp_path / f"{arch}.ckpt")
        loaded = load_checkpoint(path, model.labels)

        assert loaded.arch is model.arch
        assert loaded.vocab.token_of == model.vocab.token_of
        for name, value in model.parameters().items():
            assert np.array_equal(loaded.parameters()[name], value)
        sentences = toy_corpus.word_lists()
        assert loaded.tag(sentences, segmenter) == model.tag(sentences, segmenter)
        assert checkpoint_bytes(loaded) == path.read_bytes()


def test_truncated_checkpoint_is_corrupt(tmp_path, toy_corpus) -> None:
    model, _ = _word_setup(toy_corpus, "cnn")
    payload = checkpoint_bytes(model)

    with pytest.raises(CorruptCheckpoint):
        model_from_bytes(payload[: len(payload) // 2])
    with pytest.raises(CorruptCheckpoint):
        model_from_bytes(b"NOTACKPT" + payload[8:])
    flipped = bytearray(payload)
    flipped[len(payload) // 2] ^= 0xFF
    with pytest.raises(CorruptCheckpoint):
        model_from_bytes(bytes(flipped))


def test_checkpoint_version_is_checked(toy_corpus) -> None:
    model, _ = _word_setup(toy_corpus, "cnn")
    body = bytearray(checkpoint_bytes(model)[:-8])
    body[8:10] = struct.pack("<H", 2)
    digest = int.from_bytes(hashlib.blake2b(bytes(body), digest_size=8).digest(), "little")

    with pytest.raises(VersionMismatch):
        model_from_bytes(bytes(body) + struct.pack("<Q", digest))


def test_checkpoint_label_mismatch_on_load(tmp_path, toy_corpus) -> None:
    model, _ = _word_setup(toy_corpus, "lstm")
    path = save_checkpoint(model, tmp_path / "model.ckpt")

    with pytest.raises(LabelMismatch):
        load_checkpoint(path, LabelSet(("O", "B-NEL")))


def test_default_precision_checkpoint_reloads_exactly(tmp_path, toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "lstm")
    assert model.hyper.dtype == "float64"
    model, _ = train(model, toy_corpus, toy_corpus, segmenter, TrainConfig(epochs=5, batch_size=3, seed=2))
    trained = model.copy_parameters()

    loaded = load_checkpoint(save_checkpoint(model, tmp_path / "model.ckpt"))
    for name, value in trained.items():
        assert loaded.parameters()[name].dtype == np.float64
        assert np.array_equal(loaded.parameters()[name], value)
    for sentence in toy_corpus.sentences:
        encoding = segmenter.encode(sentence.words)
        assert np.array_equal(loaded.probabilities(encoding), model.probabilities(encoding))


def test_saving_untrained_model_rounds_it_to_stored_values(tmp_path, toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "bilstm")
    loaded = load_checkpoint(save_checkpoint(model, tmp_path / "model.ckpt"))

    for name, value in model.parameters().items():
        assert np.array_equal(loaded.parameters()[name], value)
    sentences = toy_corpus.word_lists()
    assert loaded.tag(sentences, segmenter) == model.tag(sentences, segmenter)


def test_train_without_config_uses_hyperparams_schedule(toy_corpus) -> None:
    hyper = Hyperparams(embed_dim=8, conv_filters=8, epochs=2, batch_size=5, learning_rate=0.02, seed=4)
    model, segmenter = _word_setup(toy_corpus, "cnn", hyper)
    _, history = train(model, toy_corpus, None, segmenter)

    assert history.epochs_run == 2
    assert TrainConfig.from_hyper(hyper) == TrainConfig(epochs=2, batch_size=5, learning_rate=0.02, seed=4)
    assert TrainConfig.from_hyper(hyper, epochs=7).epochs == 7


def test_train_records_schedule_used_in_hyperparams(toy_corpus) -> None:
    model, segmenter = _word_setup(toy_corpus, "cnn")
    model, _ = train(model, toy_corpus, None, segmenter, TrainConfig(epochs=1, batch_size=4, learning_rate=0.05))

    assert (model.hyper.epochs, model.hyper.batch_size, model.hyper.learning_rate) == (1, 4, 0.05)
    assert model.hyper.embed_dim == SMALL.embed_dim

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np
from tqdm import tqdm

from subwordner.alignment import DEFAULT_MAX_LEN, build_batch, club_labels, propagate_labels
from subwordner.corpus import LabeledCorpus, LabelSet
from subwordner.errors import (
    CorruptCheckpoint,
    EmptySplit,
    InvalidConfig,
    InvalidHyper,
    LabelMismatch,
    VersionMismatch,
)
from subwordner.files import write_bytes_atomic
from subwordner.metrics import evaluate
from subwordner.nn import (
    BiLSTM,
    Conv1D,
    Dense,
    Embedding,
    LSTM,
    RmspropState,
    clip_by_global_norm,
    masked_softmax_ce,
    rmsprop_step,
    softmax,
)
from subwordner.rules import (
    Architecture,
    ClubbingStrategy,
    SegmentationMode,
    normalize_arch,
    normalize_mode,
    normalize_strategy,
)
from subwordner.tokenizers import SubwordEncoding, Vocab, vocab_from_tokens


logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SWNRCKPT"
CHECKPOINT_VERSION = 1
PREDICT_BATCH = 64
SCHEDULE_FIELDS = ("epochs", "batch_size", "learning_rate")
STORAGE_DTYPE = np.dtype("<f4")


class SegmenterLike(Protocol):
    vocab: Vocab
    mode: SegmentationMode

    def encode(self, words: Sequence[str]) -> SubwordEncoding: ...


@dataclass(frozen=True)
class Hyperparams:
    embed_dim: int = 300
    conv_filters: int = 512
    conv_kernel: int = 3
    lstm_hidden: int = 512
    bilstm_hidden: int = 512
    batch_size: int = 16
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    epochs: int = 20
    seed: int = 0
    dtype: str = "float64"

    def validate(self) -> None:
        for item in fields(self):
            value = getattr(self, item.name)
            if item.name in {"seed", "dtype"}:
                continue
            if value <= 0:
                raise InvalidHyper(f"{item.name} must be positive", path=item.name, actual=str(value))
        if self.conv_kernel % 2 == 0:
            raise InvalidHyper("conv_kernel must be odd for same padding", path="conv_kernel", actual=str(self.conv_kernel))
        if not 0.0 < self.rho < 1.0:
            raise InvalidHyper("rho must lie in (0, 1)", path="rho", actual=str(self.rho))
        if self.dtype not in {"float64", "float32"}:
            raise InvalidHyper("dtype must be float64 or float32", path="dtype", actual=self.dtype)
        if self.seed < 0:
            raise InvalidHyper("seed must be non-negative", path="seed", actual=str(self.seed))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> Hyperparams:
        known = {item.name for item in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    max_len: int = DEFAULT_MAX_LEN
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 3
    strategy: ClubbingStrategy = ClubbingStrategy.FIRST
    clip_norm: float | None = None
    progress: bool = False

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "max_len", "patience"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1", path=name, actual=str(getattr(self, name)))
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive", path="learning_rate")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise InvalidConfig("clip_norm must be positive when set", path="clip_norm")

    @classmethod
    def from_hyper(cls, hyper: Hyperparams, **overrides: Any) -> TrainConfig:
        """Schedule defaults taken from ``hyper``; keyword overrides win."""
        base = {name: getattr(hyper, name) for name in SCHEDULE_FIELDS}
        base["seed"] = hyper.seed
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["strategy"] = self.strategy.value
        return payload


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def lines(self) -> list[str]:
        """One line per epoch; wall-clock is left out so reruns compare byte for byte."""
        out = []
        for epoch, (loss, f1) in enumerate(zip(self.train_loss, self.val_macro_f1), start=1):
            out.append(f"{epoch}\t{loss:.10f}\t{'-' if f1 is None else format(f1, '.10f')}")
        return out


class TaggerModel:
    """ids -> embedding -> CNN | LSTM | BiLSTM -> dense -> softmax, one label per subtoken."""

    def __init__(
        self,
        arch: Architecture,
        hyper: Hyperparams,
        vocab: Vocab,
        labels: LabelSet,
        mode: SegmentationMode,
        embedding: Embedding,
        encoder: Conv1D | LSTM | BiLSTM,
        dense: Dense,
    ) -> None:
        if dense.params["b"].shape[0] != len(labels):
            raise InvalidHyper(f"dense output width {dense.params['b'].shape[0]} != {len(labels)} labels")
        self.arch = arch
        self.hyper = hyper
        self.vocab = vocab
        self.labels = labels
        self.mode = mode
        self.embedding = embedding
        self.encoder = encoder
        self.dense = dense
        self._lengths: np.ndarray | None = None
        self._mask: np.ndarray | None = None

    @property
    def encoder_width(self) -> int:
        return self.encoder.out_dim

    def parameters(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for prefix, layer in (("embedding", self.embedding), ("encoder", self.encoder), ("dense", self.dense)):
            named.update({f"{prefix}.{name}": value for name, value in layer.params.items()})
        return named

    def gradients(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for prefix, layer in (("embedding", self.embedding), ("encoder", self.encoder), ("dense", self.dense)):
            named.update({f"{prefix}.{name}": value for name, value in layer.grads.items()})
        return named

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.parameters().items()}

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        current = self.parameters()
        if set(values) != set(current):
            raise CorruptCheckpoint(
                "parameter names do not match the architecture",
                expected=",".join(sorted(current)),
                actual=",".join(sorted(values)),
            )
        for name, target in current.items():
            if values[name].shape != target.shape:
                raise CorruptCheckpoint(
                    f"parameter {name} has shape {values[name].shape}, expected {target.shape}",
                    path=name,
                )
            target[...] = values[name]

    def round_to_storage(self) -> None:
        """Round every weight in place to the float32 values a checkpoint stores."""
        for value in self.parameters().values():
            value[...] = value.astype(STORAGE_DTYPE).astype(value.dtype)

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Logits of shape (batch, len, |labels|); padded positions see zero embeddings."""
        weights = mask.astype(self.embedding.params["table"].dtype)[..., None]
        self._mask = weights
        x = self.embedding.forward(ids) * weights
        if isinstance(self.encoder, BiLSTM):
            self._lengths = mask.sum(axis=1).astype(np.int64)
            hidden = self.encoder.forward(x, lengths=self._lengths)
        else:
            hidden = self.encoder.forward(x)
        return self.dense.forward(hidden)

    def backward(self, dlogits: np.ndarray) -> None:
        dhidden = self.dense.backward(dlogits)
        dx = self.encoder.backward(dhidden)
        self.embedding.backward(dx * self._mask)

    def probabilities(self, encoding: SubwordEncoding) -> np.ndarray:
        ids = np.asarray([encoding.ids], dtype=np.int64)
        mask = np.ones_like(ids, dtype=np.int8)
        return softmax(self.forward(ids, mask))[0]

    def predict_subtokens(self, encodings: Sequence[SubwordEncoding]) -> list[np.ndarray]:
        """Argmax label index per subtoken; ties resolve to the lowest index."""
        results: list[np.ndarray] = []
        for start in range(0, len(encodings), PREDICT_BATCH):
            chunk = list(encodings[start : start + PREDICT_BATCH])
            nonempty = [enc for enc in chunk if len(enc)]
            predicted: dict[int, np.ndarray] = {}
            if nonempty:
                width = max(len(enc) for enc in nonempty)
                batch = build_batch(nonempty, None, width, self.vocab.pad_id)
                best = self.forward(batch.ids, batch.mask).argmax(axis=-1)
                for row, enc in enumerate(nonempty):
                    predicted[id(enc)] = best[row, : len(enc)]
            for enc in chunk:
                results.append(predicted.get(id(enc), np.zeros(0, dtype=np.int64)))
        return results

    def tag(
        self,
        sentences: Sequence[Sequence[str]],
        segmenter: SegmenterLike,
        strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
    ) -> list[list[str]]:
        strategy = normalize_strategy(strategy)
        encodings = [segmenter.encode(words) for words in sentences]
        tagged: list[list[str]] = []
        for encoding, indices in zip(encodings, self.predict_subtokens(encodings)):
            sub_labels = [self.labels.label(int(i)) for i in indices]
            tagged.append(club_labels(sub_labels, encoding, strategy))
        return tagged


TrainedModel = TaggerModel


def build_model(
    arch: str | Architecture,
    hyper: Hyperparams,
    vocab: Vocab,
    labels: LabelSet,
    seed: int | None = None,
    *,
    mode: str | SegmentationMode = SegmentationMode.SUBWORD,
) -> TaggerModel:
    arch = normalize_arch(arch)
    hyper.validate()
    if len(vocab) == 0:
        raise InvalidHyper("vocab is empty", path="vocab")
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    dtype = np.dtype(hyper.dtype)
    embedding = Embedding.init(len(vocab), hyper.embed_dim, rng, dtype)
    encoder: Conv1D | LSTM | BiLSTM
    if arch is Architecture.CNN:
        encoder = Conv1D.init(hyper.conv_kernel, hyper.embed_dim, hyper.conv_filters, rng, dtype)
    elif arch is Architecture.LSTM:
        encoder = LSTM.init(hyper.embed_dim, hyper.lstm_hidden, rng, dtype)
    else:
        encoder = BiLSTM.init(hyper.embed_dim, hyper.bilstm_hidden, rng, dtype)
    dense = Dense.init(encoder.out_dim, len(labels), rng, dtype)
    return TaggerModel(arch, hyper, vocab, labels, normalize_mode(mode), embedding, encoder, dense)


def count_params(model: TaggerModel) -> int:
    return int(sum(value.size for value in model.parameters().values()))


def _check_labels(labels: LabelSet, corpus: LabeledCorpus, what: str) -> None:
    unknown = corpus.tag_set() - set(labels.labels)
    if unknown:
        raise LabelMismatch(
            f"{what} split uses labels the model does not know: {', '.join(sorted(unknown))}",
            path=what,
            expected=",".join(labels.labels),
            actual=",".join(sorted(unknown)),
        )


def train(
    model: TaggerModel,
    train_corpus: LabeledCorpus,
    val_corpus: LabeledCorpus | None,
    segmenter: SegmenterLike,
    config: TrainConfig | None = None,
) -> tuple[TaggerModel, TrainHistory]:
    """Shuffle, batch, propagate labels, minimise masked CE with RMSProp; keep the best validation epoch.

    Without ``config`` the schedule comes from ``model.hyper``. The schedule actually
    used is written back into ``model.hyper``, and the final weights are rounded to
    checkpoint precision so the returned model equals its saved checkpoint.
    """
    if config is None:
        config = TrainConfig.from_hyper(model.hyper)
    config.validate()
    if not train_corpus.sentences:
        raise EmptySplit("training split has no sentences", path="train")
    if val_corpus is not None and not val_corpus.sentences:
        raise EmptySplit("validation split has no sentences", path="validation")
    _check_labels(model.labels, train_corpus, "train")
    if val_corpus is not None:
        _check_labels(model.labels, val_corpus, "validation")
    else:
        logger.warning("No validation split: early stopping disabled, final epoch kept")

    encodings = [segmenter.encode(sentence.words) for sentence in train_corpus.sentences]
    label_rows = [
        [model.labels.index(tag) for tag in propagate_labels(sentence.tags, encoding)]
        for sentence, encoding in zip(train_corpus.sentences, encodings)
    ]
    pad_id = model.vocab.pad_id
    state = RmspropState(learning_rate=config.learning_rate, rho=model.hyper.rho, epsilon=model.hyper.epsilon)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best_params: dict[str, np.ndarray] | None = None
    best_f1 = -1.0
    stale = 0
    warned_truncation = False

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(encodings))
        loss_sum = 0.0
        token_sum = 0
        starts = range(0, len(order), config.batch_size)
        for start in tqdm(starts, desc=f"epoch {epoch}", disable=not config.progress, leave=False):
            rows = order[start : start + config.batch_size]
            batch = build_batch(
                [encodings[i] for i in rows],
                [label_rows[i] for i in rows],
                config.max_len,
                pad_id,
            )
            if batch.truncated_rows and not warned_truncation:
                logger.warning("Sentences longer than max_len=%d are truncated at word boundaries", config.max_len)
                warned_truncation = True
            tokens = int(batch.mask.sum())
            if tokens == 0:
                continue
            logits = model.forward(batch.ids, batch.mask)
            loss, dlogits = masked_softmax_ce(logits, batch.label_indices, batch.mask)
            model.backward(dlogits)
            grads = model.gradients()
            if config.clip_norm is not None:
                clip_by_global_norm(grads, config.clip_norm)
            rmsprop_step(model.parameters(), grads, state)
            loss_sum += loss * tokens
            token_sum += tokens

        epoch_loss = loss_sum / token_sum if token_sum else 0.0
        val_f1: float | None = None
        if val_corpus is not None:
            val_f1 = evaluate(model, val_corpus, segmenter, config.strategy).macro.f1
        elapsed = time.perf_counter() - started
        history.train_loss.append(epoch_loss)
        history.val_macro_f1.append(val_f1)
        history.seconds.append(elapsed)
        logger.info(
            "epoch %d/%d loss=%.6f val_macro_f1=%s (%.2fs)",
            epoch,
            config.epochs,
            epoch_loss,
            "-" if val_f1 is None else f"{val_f1:.4f}",
            elapsed,
        )

        if val_f1 is None:
            continue
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = model.copy_parameters()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                history.stopped_early = True
                logger.info("Early stopping after epoch %d (best epoch %d)", epoch, history.best_epoch)
                break

    if best_params is not None:
        model.load_parameters(best_params)
    model.hyper = replace(model.hyper, **{name: getattr(config, name) for name in SCHEDULE_FIELDS})
    model.round_to_storage()
    return model, history


def predict_sentence(
    model: TaggerModel,
    words: Sequence[str],
    segmenter: SegmenterLike,
    strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
) -> list[tuple[str, str]]:
    if not words:
        raise ValueError("words must be non-empty")
    labels = model.tag([words], segmenter, strategy)[0]
    return list(zip(words, labels))


def predict_corpus(
    model: TaggerModel,
    sentences: Sequence[Sequence[str]],
    segmenter: SegmenterLike,
    strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
) -> list[list[str]]:
    return model.tag(sentences, segmenter, strategy)


# Checkpoints: magic, u16 version, u32 header length, JSON header, u32 tensor count,
# named little-endian float32 tensors, trailing u64 checksum over everything before it.


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _header(model: TaggerModel) -> dict[str, Any]:
    return {
        "arch": model.arch.value,
        "hyper": model.hyper.to_dict(),
        "labels": list(model.labels.labels),
        "mode": model.mode.value,
        "vocab": {"tokens": list(model.vocab.token_of), **model.vocab.settings()},
        "vocab_fingerprint": model.vocab.fingerprint(),
    }


def checkpoint_bytes(model: TaggerModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, ensure_ascii=False).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(header)), header]
    params = model.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, value in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype=STORAGE_DTYPE).tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<Q", _checksum(body))


def save_checkpoint(model: TaggerModel, path: str | Path) -> Path:
    """Write ``model`` to ``path``; the in-memory weights are rounded to the stored precision first."""
    model.round_to_storage()
    return write_bytes_atomic(path, checkpoint_bytes(model))


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CorruptCheckpoint("checkpoint ends unexpectedly")
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(payload: bytes, labels: LabelSet | None = None, *, path: str = "") -> TaggerModel:
    if len(payload) < len(CHECKPOINT_MAGIC) + 8 or not payload.startswith(CHECKPOINT_MAGIC):
        raise CorruptCheckpoint("not a subwordner checkpoint (bad magic or too short)", path=path)
    body, (stored,) = payload[:-8], struct.unpack("<Q", payload[-8:])
    if _checksum(body) != stored:
        raise CorruptCheckpoint("checksum mismatch: checkpoint is truncated or corrupted", path=path)

    reader = _Reader(body)
    reader.take(len(CHECKPOINT_MAGIC))
    version, header_len = reader.unpack("<HI")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint format version {version} is not supported",
            path=path,
            expected=str(CHECKPOINT_VERSION),
            actual=str(version),
        )
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        vocab_info = header["vocab"]
        vocab = vocab_from_tokens(
            vocab_info["tokens"],
            unk_token=vocab_info["unk_token"],
            pad_token=vocab_info["pad_token"],
            continuation_prefix=vocab_info["continuation_prefix"],
            max_word_chars=vocab_info["max_word_chars"],
        )
        stored_labels = LabelSet(tuple(header["labels"]))
        hyper = Hyperparams.from_dict(header["hyper"])
        arch = normalize_arch(header["arch"])
        mode = normalize_mode(header["mode"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint header: {exc}", path=path) from exc
    if vocab.fingerprint() != header.get("vocab_fingerprint"):
        raise CorruptCheckpoint("vocab fingerprint does not match the stored token list", path=path)
    if labels is not None and labels != stored_labels:
        raise LabelMismatch(
            f"checkpoint was trained on {len(stored_labels)} labels, {len(labels)} supplied",
            path=path,
            expected=",".join(stored_labels.labels),
            actual=",".join(labels.labels),
        )

    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(STORAGE_DTYPE.itemsize * size), dtype=STORAGE_DTYPE).reshape(shape)
        tensors[name] = data.astype(hyper.dtype)
    if reader.offset != len(body):
        raise CorruptCheckpoint("trailing bytes after the last tensor", path=path)

    model = build_model(arch, hyper, vocab, stored_labels, mode=mode)
    model.load_parameters(tensors)
    return model


def load_checkpoint(path: str | Path, labels: LabelSet | None = None) -> TaggerModel:
    return model_from_bytes(Path(path).read_bytes(), labels, path=str(path))

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Sequence

from subwordner.alignment import club_labels, propagate_labels
from subwordner.corpus import LabeledCorpus
from subwordner.errors import LabelMismatch, LengthMismatch, UnknownScheme
from subwordner.rules import OUTSIDE_LABEL, ClubbingStrategy, SpanScheme, normalize_scheme, normalize_strategy, split_label
from subwordner.tokenizers import FertilityStats, fertility_from_encodings

if TYPE_CHECKING:
    from subwordner.taggers import SegmenterLike, TaggerModel


AVERAGING_NOTE = "headline = macro average over non-O classes present in gold; accuracy counts every root token"


@dataclass
class ConfusionCounts:
    tp: Counter[str] = field(default_factory=Counter)
    fp: Counter[str] = field(default_factory=Counter)
    fn: Counter[str] = field(default_factory=Counter)
    total_tokens: int = 0
    correct_tokens: int = 0

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            total_tokens=self.total_tokens + other.total_tokens,
            correct_tokens=self.correct_tokens + other.correct_tokens,
        )

    def labels(self) -> list[str]:
        return sorted(set(self.tp) | set(self.fp) | set(self.fn))

    def gold_count(self, label: str) -> int:
        return self.tp[label] + self.fn[label]

    def predicted_count(self, label: str) -> int:
        return self.tp[label] + self.fp[label]


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict[str, float | int]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "support": self.support}


@dataclass(frozen=True)
class ClassMetrics:
    per_class: dict[str, Scores]
    macro: Scores
    micro: Scores
    accuracy: float
    macro_empty: bool


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def token_confusion(pred: Sequence[str], gold: Sequence[str]) -> ConfusionCounts:
    if len(pred) != len(gold):
        raise LengthMismatch(len(gold), len(pred), what="predicted labels")
    counts = ConfusionCounts()
    for p, g in zip(pred, gold):
        counts.total_tokens += 1
        if p == g:
            counts.correct_tokens += 1
            counts.tp[g] += 1
        else:
            counts.fp[p] += 1
            counts.fn[g] += 1
    return counts


def token_metrics(counts: ConfusionCounts, outside: str = OUTSIDE_LABEL) -> ClassMetrics:
    """Per-class, macro and micro P/R/F1 over non-outside classes, plus token accuracy."""
    classes = [label for label in counts.labels() if label != outside]
    per_class: dict[str, Scores] = {}
    for label in classes:
        p, r, f = prf(counts.tp[label], counts.fp[label], counts.fn[label])
        per_class[label] = Scores(p, r, f, counts.gold_count(label))

    scored = [label for label in classes if counts.gold_count(label) > 0]
    support = sum(counts.gold_count(label) for label in classes)
    if scored:
        macro = Scores(
            precision=sum(per_class[label].precision for label in scored) / len(scored),
            recall=sum(per_class[label].recall for label in scored) / len(scored),
            f1=sum(per_class[label].f1 for label in scored) / len(scored),
            support=support,
        )
    else:
        macro = Scores(0.0, 0.0, 0.0, 0)

    tp = sum(counts.tp[label] for label in classes)
    fp = sum(counts.fp[label] for label in classes)
    fn = sum(counts.fn[label] for label in classes)
    micro = Scores(*prf(tp, fp, fn), support=support)
    accuracy = counts.correct_tokens / counts.total_tokens if counts.total_tokens else 0.0
    return ClassMetrics(per_class=per_class, macro=macro, micro=micro, accuracy=accuracy, macro_empty=not scored)


def decode_spans(labels: Sequence[str], scheme: str | SpanScheme) -> list[tuple[str, int, int]]:
    """Entity spans as (class, start, end) with ``end`` exclusive.

    bio: maximal B-X (I-X)* runs; an I-X that does not continue an X span opens
    a new one. Bare non-O tags behave like I-X. flat: maximal runs of equal non-O labels.
    """
    try:
        scheme = normalize_scheme(scheme)
    except ValueError:
        raise UnknownScheme(str(scheme)) from None

    spans: list[tuple[str, int, int]] = []
    current: str | None = None
    start = 0
    for pos, label in enumerate(labels):
        if label == OUTSIDE_LABEL:
            opens, name = False, None
        elif scheme is SpanScheme.FLAT:
            name = label
            opens = current != name
        else:
            prefix, name = split_label(label)
            opens = prefix == "B" or current != name
        if current is not None and (name is None or opens):
            spans.append((current, start, pos))
            current = None
        if name is not None and current is None:
            current, start = name, pos
    if current is not None:
        spans.append((current, start, len(labels)))
    return spans


def encode_spans(spans: Sequence[tuple[str, int, int]], length: int, scheme: str | SpanScheme) -> list[str]:
    scheme = normalize_scheme(scheme)
    labels = [OUTSIDE_LABEL] * length
    for name, start, end in spans:
        for pos in range(start, end):
            if scheme is SpanScheme.FLAT:
                labels[pos] = name
            else:
                labels[pos] = f"{'B' if pos == start else 'I'}-{name}"
    return labels


def span_confusion(pred: Sequence[str], gold: Sequence[str], scheme: str | SpanScheme) -> ConfusionCounts:
    """Exact-match entity counts: a span is a hit only if class and both boundaries agree."""
    if len(pred) != len(gold):
        raise LengthMismatch(len(gold), len(pred), what="predicted labels")
    pred_spans = set(decode_spans(pred, scheme))
    gold_spans = set(decode_spans(gold, scheme))
    counts = ConfusionCounts()
    for name, _, _ in pred_spans & gold_spans:
        counts.tp[name] += 1
    for name, _, _ in pred_spans - gold_spans:
        counts.fp[name] += 1
    for name, _, _ in gold_spans - pred_spans:
        counts.fn[name] += 1
    return counts


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, Scores]
    macro: Scores
    micro: Scores
    accuracy: float
    strategy: ClubbingStrategy
    sentence_count: int
    token_count: int
    macro_empty: bool = False
    scheme: SpanScheme | None = None
    spans: ClassMetrics | None = None
    fertility: FertilityStats | None = None
    subtoken_accuracy: float | None = None
    averaging: str = AVERAGING_NOTE

    @property
    def headline_f1(self) -> float:
        return self.macro.f1

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "strategy": self.strategy.value,
            "averaging": self.averaging,
            "sentence_count": self.sentence_count,
            "token_count": self.token_count,
            "accuracy": self.accuracy,
            "macro": self.macro.to_dict(),
            "micro": self.micro.to_dict(),
            "macro_empty": self.macro_empty,
            "per_class": {label: scores.to_dict() for label, scores in self.per_class.items()},
            "subtoken_accuracy": self.subtoken_accuracy,
        }
        if self.spans is not None and self.scheme is not None:
            payload["spans"] = {
                "scheme": self.scheme.value,
                "macro": self.spans.macro.to_dict(),
                "micro": self.spans.micro.to_dict(),
                "per_class": {label: s.to_dict() for label, s in self.spans.per_class.items()},
            }
        if self.fertility is not None:
            payload["fertility"] = self.fertility.to_dict()
        return payload


def score_sentences(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    *,
    strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
    scheme: str | SpanScheme | None = None,
    fertility: FertilityStats | None = None,
    subtoken_accuracy: float | None = None,
) -> EvalReport:
    if len(gold) != len(pred):
        raise LengthMismatch(len(gold), len(pred), what="predicted sentences")
    counts = ConfusionCounts()
    span_counts = ConfusionCounts()
    resolved_scheme = normalize_scheme(scheme) if scheme is not None else None
    for gold_tags, pred_tags in zip(gold, pred):
        counts = counts + token_confusion(pred_tags, gold_tags)
        if resolved_scheme is not None:
            span_counts = span_counts + span_confusion(pred_tags, gold_tags, resolved_scheme)
    token = token_metrics(counts)
    return EvalReport(
        per_class=token.per_class,
        macro=token.macro,
        micro=token.micro,
        accuracy=token.accuracy,
        strategy=normalize_strategy(strategy),
        sentence_count=len(gold),
        token_count=counts.total_tokens,
        macro_empty=token.macro_empty,
        scheme=resolved_scheme,
        spans=token_metrics(span_counts) if resolved_scheme is not None else None,
        fertility=fertility,
        subtoken_accuracy=subtoken_accuracy,
    )


def evaluate(
    model: TaggerModel,
    corpus: LabeledCorpus,
    segmenter: SegmenterLike,
    strategy: str | ClubbingStrategy = ClubbingStrategy.FIRST,
    scheme: str | SpanScheme | None = None,
) -> EvalReport:
    """Segment, predict and club every sentence, then score at root-token level."""
    unknown = corpus.tag_set() - set(model.labels.labels)
    if unknown:
        raise LabelMismatch(
            f"corpus labels not known to the model: {', '.join(sorted(unknown))}",
            path=corpus.split_name,
            expected=",".join(model.labels.labels),
            actual=",".join(sorted(unknown)),
        )
    strategy = normalize_strategy(strategy)
    encodings = [segmenter.encode(sentence.words) for sentence in corpus.sentences]
    subtoken_predictions = model.predict_subtokens(encodings)

    predicted: list[list[str]] = []
    sub_correct = 0
    sub_total = 0
    for sentence, encoding, indices in zip(corpus.sentences, encodings, subtoken_predictions):
        sub_labels = [model.labels.label(int(i)) for i in indices]
        predicted.append(club_labels(sub_labels, encoding, strategy))
        gold_sub = propagate_labels(sentence.tags, encoding)
        sub_correct += sum(1 for p, g in zip(sub_labels, gold_sub) if p == g)
        sub_total += len(gold_sub)

    return score_sentences(
        [sentence.tags for sentence in corpus.sentences],
        predicted,
        strategy=strategy,
        scheme=scheme,
        fertility=fertility_from_encodings(encodings, segmenter.vocab.unk_id),
        subtoken_accuracy=sub_correct / sub_total if sub_total else None,
    )

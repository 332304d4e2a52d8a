from __future__ import annotations

from enum import Enum


OUTSIDE_LABEL = "O"

SPLIT_NAMES = ("train", "test", "validation", "unsplit")


class Architecture(str, Enum):
    CNN = "cnn"
    LSTM = "lstm"
    BILSTM = "bilstm"

    @property
    def display(self) -> str:
        return ARCH_DISPLAY[self]


ARCH_DISPLAY = {
    Architecture.CNN: "CNN",
    Architecture.LSTM: "LSTM",
    Architecture.BILSTM: "BiLSTM",
}


class SegmentationMode(str, Enum):
    SUBWORD = "subword"
    WORD = "word"
    EXTERNAL = "external"


class ClubbingStrategy(str, Enum):
    """How per-subtoken predictions collapse back onto their root word."""

    FIRST = "first"
    MAJORITY = "majority"


class SpanScheme(str, Enum):
    BIO = "bio"
    FLAT = "flat"


def _normalize(value: str, enum_type: type[Enum], what: str) -> Enum:
    cleaned = value.strip().lower()
    for member in enum_type:
        if member.value == cleaned:
            return member
    choices = ", ".join(member.value for member in enum_type)
    raise ValueError(f"{what} must be one of: {choices}")


def normalize_arch(value: str | Architecture) -> Architecture:
    if isinstance(value, Architecture):
        return value
    return _normalize(value, Architecture, "arch")  # type: ignore[return-value]


def normalize_mode(value: str | SegmentationMode) -> SegmentationMode:
    if isinstance(value, SegmentationMode):
        return value
    return _normalize(value, SegmentationMode, "mode")  # type: ignore[return-value]


def normalize_strategy(value: str | ClubbingStrategy) -> ClubbingStrategy:
    if isinstance(value, ClubbingStrategy):
        return value
    return _normalize(value, ClubbingStrategy, "strategy")  # type: ignore[return-value]


def normalize_scheme(value: str | SpanScheme) -> SpanScheme:
    if isinstance(value, SpanScheme):
        return value
    return _normalize(value, SpanScheme, "scheme")  # type: ignore[return-value]


def split_label(label: str) -> tuple[str | None, str]:
    """Split a tag into its BIO prefix and entity class; bare tags have no prefix."""
    if len(label) > 2 and label[1] == "-" and label[0] in {"B", "I"}:
        return label[0], label[2:]
    return None, label

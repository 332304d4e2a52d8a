from __future__ import annotations

from subwordner.reporter import Issue, issue


class SubwordNerError(Exception):
    """Base class for every failure the toolkit reports by name."""

    issue_type = "ERROR"

    def __init__(self, description: str, *, path: str = "", expected: str = "", actual: str = "") -> None:
        super().__init__(description)
        self.description = description
        self.path = path
        self.expected = expected
        self.actual = actual

    def to_issue(self) -> Issue:
        return issue(
            path=self.path,
            issue_type=self.issue_type,
            expected=self.expected,
            actual=self.actual,
            description=self.description,
        )


# corpus


class MalformedLine(SubwordNerError):
    issue_type = "MALFORMED_LINE"

    def __init__(self, line_no: int, line: str, *, path: str = "") -> None:
        self.line_no = line_no
        fields = line.split("\t")
        super().__init__(
            f"Line {line_no}: expected 'word<TAB>tag', got {len(fields)} tab-separated field(s).",
            path=f"{path}:{line_no}" if path else f"line {line_no}",
            expected="2 fields",
            actual=str(len(fields)),
        )


class EmptyCorpus(SubwordNerError):
    issue_type = "EMPTY_CORPUS"

    def __init__(self, *, path: str = "") -> None:
        super().__init__("Corpus contains no sentences.", path=path, expected=">= 1 sentence", actual="0")


class InvalidConfig(SubwordNerError):
    issue_type = "INVALID_CONFIG"


# tokenizers


class DuplicateToken(SubwordNerError):
    issue_type = "DUPLICATE_TOKEN"

    def __init__(self, token: str, line: int, *, first_line: int, path: str = "") -> None:
        self.token = token
        self.line = line
        super().__init__(
            f"Token {token!r} on line {line} already defined on line {first_line}.",
            path=f"{path}:{line}" if path else f"line {line}",
            expected="unique token",
            actual=token,
        )


class MissingSpecial(SubwordNerError):
    issue_type = "MISSING_SPECIAL"

    def __init__(self, token: str, *, path: str = "") -> None:
        self.token = token
        super().__init__(f"Special token {token!r} is not in the vocab.", path=path, expected=token, actual="absent")


class InvariantViolation(SubwordNerError):
    issue_type = "INVARIANT_VIOLATION"

    def __init__(self, sentence_no: int, reason: str, *, path: str = "") -> None:
        self.sentence_no = sentence_no
        self.reason = reason
        super().__init__(
            f"Sentence {sentence_no}: {reason}",
            path=f"{path}:{sentence_no}" if path else f"sentence {sentence_no}",
            expected="valid encoding",
            actual=reason,
        )


class MissingSegmentation(SubwordNerError):
    issue_type = "MISSING_SEGMENTATION"


# alignment / nn


class LengthMismatch(SubwordNerError):
    issue_type = "LENGTH_MISMATCH"

    def __init__(self, expected: int, actual: int, *, what: str = "sequence") -> None:
        super().__init__(
            f"{what}: expected length {expected}, got {actual}.",
            path=what,
            expected=str(expected),
            actual=str(actual),
        )


class IdOutOfRange(SubwordNerError):
    issue_type = "ID_OUT_OF_RANGE"


class ShapeMismatch(SubwordNerError):
    issue_type = "SHAPE_MISMATCH"


class AllMasked(SubwordNerError):
    issue_type = "ALL_MASKED"

    def __init__(self) -> None:
        super().__init__("Every position is masked; loss is undefined.", expected="sum(mask) > 0", actual="0")


# taggers


class InvalidHyper(SubwordNerError):
    issue_type = "INVALID_HYPER"


class EmptySplit(SubwordNerError):
    issue_type = "EMPTY_SPLIT"


class LabelMismatch(SubwordNerError):
    issue_type = "LABEL_MISMATCH"


class VersionMismatch(SubwordNerError):
    issue_type = "VERSION_MISMATCH"


class CorruptCheckpoint(SubwordNerError):
    issue_type = "CORRUPT_CHECKPOINT"


# metrics


class UnknownScheme(SubwordNerError):
    issue_type = "UNKNOWN_SCHEME"

    def __init__(self, scheme: str) -> None:
        super().__init__(f"Unknown span scheme {scheme!r}.", path="scheme", expected="bio|flat", actual=scheme)

from __future__ import annotations

from fastapi import UploadFile

from subwordner.corpus import LabeledCorpus, parse_conll
from subwordner.errors import SubwordNerError
from subwordner.reporter import Issue, issue


MAX_UPLOAD_BYTES = 1024 * 1024  # 1 MiB
CHUNK_SIZE = 64 * 1024


def decode_utf8(payload: bytes) -> tuple[str | None, str | None]:
    try:
        return payload.decode("utf-8"), None
    except UnicodeDecodeError as exc:
        return None, f"Upload must be UTF-8 encoded (invalid byte at offset {exc.start})."


async def _read_upload_with_limit(file: UploadFile, limit_bytes: int) -> tuple[bytes | None, str | None]:
    chunks: list[bytes] = []
    total = 0

    while True:
        chunk = await file.read(CHUNK_SIZE)
        if not chunk:
            break
        total += len(chunk)
        if total > limit_bytes:
            return None, f"Upload exceeds max size of {limit_bytes} bytes."
        chunks.append(chunk)

    return b"".join(chunks), None


async def load_corpus_upload(file: UploadFile, label: str) -> tuple[LabeledCorpus | None, list[Issue]]:
    """Read a CoNLL upload; problems come back as issues rather than exceptions."""
    try:
        payload, size_error = await _read_upload_with_limit(file, MAX_UPLOAD_BYTES)
    except Exception as exc:
        return None, [
            issue(
                path=label,
                issue_type="INVALID_UPLOAD",
                expected="readable-file",
                actual="file",
                description=f"Failed to read uploaded file: {exc}",
            )
        ]

    if size_error:
        return None, [
            issue(
                path=label,
                issue_type="FILE_TOO_LARGE",
                expected=f"<= {MAX_UPLOAD_BYTES} bytes",
                actual="file",
                description=size_error,
            )
        ]

    text, decode_error = decode_utf8(payload)
    if decode_error:
        return None, [
            issue(
                path=label,
                issue_type="INVALID_ENCODING",
                expected="utf-8",
                actual="file",
                description=decode_error,
            )
        ]

    try:
        return parse_conll(text, path=label), []
    except SubwordNerError as exc:
        return None, [exc.to_issue()]

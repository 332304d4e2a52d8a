from __future__ import annotations

import logging
import os
from pathlib import Path

from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from subwordner import __version__
from subwordner.errors import SubwordNerError
from subwordner.reporter import Issue, build_report, issue
from subwordner.rules import SegmentationMode, normalize_mode, normalize_strategy
from subwordner.taggers import TaggerModel, count_params, load_checkpoint, predict_sentence
from subwordner.tokenizers import Segmenter, fertility_from_encodings, format_segmentation
from subwordner.upload_loader import load_corpus_upload


logger = logging.getLogger(__name__)

CHECKPOINT_ENV = "SUBWORDNER_CHECKPOINT"


class PredictRequest(BaseModel):
    words: list[str] = Field(..., description="One sentence, already split into words")
    strategy: str = "first"


def _error_status_code(errors: list[Issue]) -> int:
    if any(err.issueType == "FILE_TOO_LARGE" for err in errors):
        return 413
    return 400


def _invalid(path: str, issue_type: str, expected: str, actual: str, description: str) -> JSONResponse:
    payload = build_report(
        [issue(path=path, issue_type=issue_type, expected=expected, actual=actual, description=description)]
    )
    return JSONResponse(status_code=400, content=payload)


def create_app(checkpoint: str | Path | TaggerModel) -> FastAPI:
    """Read-only tagging service over one trained checkpoint."""
    model = checkpoint if isinstance(checkpoint, TaggerModel) else load_checkpoint(checkpoint)
    source = "in-memory" if isinstance(checkpoint, TaggerModel) else str(checkpoint)
    logger.info("Serving %s (%s, %s)", source, model.arch.display, model.mode.value)

    app = FastAPI(title="subwordner", version=__version__)

    @app.get("/health")
    async def health() -> dict:
        return {
            "ok": True,
            "checkpoint": source,
            "arch": model.arch.display,
            "mode": model.mode.value,
            "labels": list(model.labels.labels),
            "vocabSize": len(model.vocab),
            "params": count_params(model),
        }

    @app.post("/predict")
    async def predict(request: PredictRequest) -> JSONResponse:
        try:
            strategy = normalize_strategy(request.strategy)
        except ValueError as exc:
            return _invalid("strategy", "INVALID_STRATEGY", "first|majority", request.strategy, str(exc))
        if not request.words:
            return _invalid("words", "EMPTY_SENTENCE", ">= 1 word", "0", "Sentence must contain at least one word.")
        bad = [word for word in request.words if not word or any(ch.isspace() for ch in word)]
        if bad:
            return _invalid("words", "INVALID_WORD", "non-empty, no whitespace", repr(bad[0]), "Words must be non-empty and contain no whitespace.")
        if model.mode is SegmentationMode.EXTERNAL:
            return _invalid(
                "mode",
                "MISSING_SEGMENTATION",
                "subword|word",
                model.mode.value,
                "Models trained on external segmentations can only tag pre-segmented files (use the CLI).",
            )

        segmenter = Segmenter(model.vocab, model.mode)
        try:
            pairs = predict_sentence(model, request.words, segmenter, strategy)
        except SubwordNerError as exc:
            return JSONResponse(status_code=400, content=build_report([exc.to_issue()]))
        encoding = segmenter.encode(request.words)
        return JSONResponse(
            status_code=200,
            content={
                "ok": True,
                "strategy": strategy.value,
                "tokens": [{"word": word, "label": label} for word, label in pairs],
                "subtokens": list(encoding.subtokens),
            },
        )

    @app.post("/tokenize")
    async def tokenize(
        conll_file: UploadFile = File(...),
        mode: str = Form(""),
    ) -> JSONResponse:
        try:
            resolved = normalize_mode(mode) if mode else model.mode
        except ValueError as exc:
            return _invalid("mode", "INVALID_MODE", "subword|word", mode, str(exc))
        if resolved is SegmentationMode.EXTERNAL:
            return _invalid("mode", "INVALID_MODE", "subword|word", mode or resolved.value, "External segmentations are not computed by the service.")

        corpus, errors = await load_corpus_upload(conll_file, "ConllFile")
        if errors:
            return JSONResponse(status_code=_error_status_code(errors), content=build_report(errors))

        segmenter = Segmenter(model.vocab, resolved)
        encodings = [segmenter.encode(sentence.words) for sentence in corpus.sentences]
        stats = fertility_from_encodings(encodings, model.vocab.unk_id)
        return JSONResponse(
            status_code=200,
            content={
                "ok": True,
                "mode": resolved.value,
                "sentences": [
                    {
                        "words": list(sentence.words),
                        "subtokens": list(encoding.subtokens),
                        "wordIds": list(encoding.word_ids),
                        "display": format_segmentation(sentence.words, encoding),
                    }
                    for sentence, encoding in zip(corpus.sentences, encodings)
                ],
                "fertility": stats.to_dict(),
            },
        )

    return app


def app_from_env() -> FastAPI:
    checkpoint = os.environ.get(CHECKPOINT_ENV)
    if not checkpoint:
        raise RuntimeError(f"Set {CHECKPOINT_ENV} to a checkpoint path.")
    return create_app(checkpoint)

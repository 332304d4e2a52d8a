from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from subwordner.config import (
    EXTERNAL_FILES,
    ExperimentGrid,
    TokenizerSpec,
    TrainSettings,
    load_grid,
    load_synth_config,
    load_train_settings,
)
from subwordner.corpus import (
    LabeledCorpus,
    LabeledSentence,
    build_label_set,
    corpus_stats,
    generate_splits,
    read_conll,
    save_conll,
    synthetic_vocab,
)
from subwordner.errors import (
    DuplicateToken,
    EmptyCorpus,
    InvalidConfig,
    InvariantViolation,
    LabelMismatch,
    MalformedLine,
    MissingSegmentation,
    MissingSpecial,
    SubwordNerError,
    UnknownScheme,
)
from subwordner.files import read_text, write_text_atomic
from subwordner.metrics import AVERAGING_NOTE, evaluate
from subwordner.reporter import (
    GridCell,
    Issue,
    build_report,
    compare_markdown,
    compare_tsv,
    eval_table,
    eval_tsv,
    f1_by_tokenizer_tsv,
    issue,
)
from subwordner.rules import Architecture, SegmentationMode, normalize_mode, normalize_scheme, normalize_strategy
from subwordner.taggers import (
    SegmenterLike,
    TaggerModel,
    build_model,
    count_params,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
    train,
)
from subwordner.tokenizers import (
    ExternalSegmenter,
    Segmenter,
    Vocab,
    build_word_vocab,
    external_vocab,
    fertility_from_encodings,
    format_segmentation,
    load_external_segmentation,
    load_vocab,
    pair_external,
    vocab_from_tokens,
    write_vocab,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAIN = 3
EXIT_EVAL = 4

INPUT_ERRORS = (
    MalformedLine,
    EmptyCorpus,
    InvalidConfig,
    DuplicateToken,
    MissingSpecial,
    InvariantViolation,
    MissingSegmentation,
    UnknownScheme,
)
COMMAND_EXIT = {"train": EXIT_TRAIN, "compare": EXIT_TRAIN, "eval": EXIT_EVAL, "predict": EXIT_EVAL}

CHECKPOINT_NAME = "model.ckpt"
HISTORY_NAME = "history.tsv"
RECORD_NAME = "run.json"


# Tokenizer resolution


@dataclass
class PreparedTokenizer:
    spec: TokenizerSpec
    vocab: Vocab
    segmenter: SegmenterLike

    @property
    def mode(self) -> SegmentationMode:
        return self.segmenter.mode


def prepare_tokenizer(spec: TokenizerSpec, splits: dict[str, LabeledCorpus]) -> PreparedTokenizer:
    """Vocab and segmenter for one tokenizer over the splits it will see."""
    if spec.kind == "word":
        vocab = build_word_vocab(splits["train"])
        return PreparedTokenizer(spec, vocab, Segmenter(vocab, SegmentationMode.WORD))
    if spec.kind == "wordpiece":
        vocab = load_vocab(spec.location)
        return PreparedTokenizer(spec, vocab, Segmenter(vocab, SegmentationMode.SUBWORD))

    encodings = {split: load_external_segmentation(spec.external_file(split)) for split in splits}
    vocab = external_vocab(encodings["train"])
    segmenter = ExternalSegmenter(vocab, {})
    for split, corpus in splits.items():
        segmenter.add(corpus, encodings[split], path=str(spec.external_file(split)))
    return PreparedTokenizer(spec, vocab, segmenter)


def segmenter_for(
    model: TaggerModel,
    corpus: LabeledCorpus | None = None,
    segmentation: str | Path | None = None,
) -> SegmenterLike:
    """Rebuild the segmenter a checkpoint was trained with; external models need the segmentation file."""
    if model.mode is not SegmentationMode.EXTERNAL:
        return Segmenter(model.vocab, model.mode)
    if segmentation is None or corpus is None:
        raise MissingSegmentation(
            "Model was trained on external segmentations; pass --segmentation for the input file.",
            path="--segmentation",
            expected="segmentation file",
            actual="absent",
        )
    segmenter = ExternalSegmenter(model.vocab, {})
    segmenter.add(corpus, load_external_segmentation(segmentation), path=str(segmentation))
    return segmenter


# Run records


@dataclass
class RunRecord:
    run_name: str
    config: dict[str, Any]
    param_count: int
    train_seconds: float
    checkpoint: str
    history: str
    epochs_run: int
    best_epoch: int | None
    train_fertility: dict[str, Any] = field(default_factory=dict)
    epoch_seconds: list[float] = field(default_factory=list)
    metrics: dict[str, Any] | None = None
    metrics_split: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> RunRecord:
        return cls(**payload)


def save_run_record(record: RunRecord, path: str | Path) -> Path:
    return write_text_atomic(path, json.dumps(record.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def load_run_record(path: str | Path) -> RunRecord:
    try:
        payload = json.loads(read_text(path))
        return RunRecord.from_dict(payload)
    except (json.JSONDecodeError, TypeError) as exc:
        raise InvalidConfig(f"unreadable run record: {exc}", path=str(path)) from exc


def _read_splits(train_path: Path, validation: Path | None, test: Path | None = None) -> dict[str, LabeledCorpus]:
    splits = {"train": read_conll(train_path, "train")}
    if validation is not None:
        splits["validation"] = read_conll(validation, "validation")
    if test is not None:
        splits["test"] = read_conll(test, "test")
    return splits


def train_run(
    run_name: str,
    tokenizer: PreparedTokenizer,
    splits: dict[str, LabeledCorpus],
    settings: TrainSettings,
    out_dir: Path,
) -> tuple[TaggerModel, RunRecord]:
    """Train one tokenizer x architecture cell and persist checkpoint, history and run record."""
    labels = build_label_set(splits["train"])
    for split, corpus in splits.items():
        unknown = corpus.tag_set() - set(labels.labels)
        if unknown:
            raise LabelMismatch(
                f"{split} split uses labels absent from train: {', '.join(sorted(unknown))}",
                path=split,
                expected=",".join(labels.labels),
                actual=",".join(sorted(unknown)),
            )
    model = build_model(settings.arch, settings.hyper, tokenizer.vocab, labels, mode=tokenizer.mode)
    logger.info(
        "Training %s: arch=%s mode=%s vocab=%d labels=%d params=%d",
        run_name,
        settings.arch.display,
        tokenizer.mode.value,
        len(tokenizer.vocab),
        len(labels),
        count_params(model),
    )
    started = time.perf_counter()
    model, history = train(model, splits["train"], splits.get("validation"), tokenizer.segmenter, settings.train)
    seconds = time.perf_counter() - started

    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = save_checkpoint(model, out_dir / CHECKPOINT_NAME)
    history_path = write_text_atomic(out_dir / HISTORY_NAME, "".join(f"{line}\n" for line in history.lines()))
    train_encodings = [tokenizer.segmenter.encode(s.words) for s in splits["train"].sentences]
    record = RunRecord(
        run_name=run_name,
        config={
            **settings.snapshot(),
            "tokenizer": {
                "name": tokenizer.spec.name,
                "kind": tokenizer.spec.kind,
                "location": None if tokenizer.spec.location is None else str(tokenizer.spec.location),
            },
        },
        param_count=count_params(model),
        train_seconds=seconds,
        checkpoint=str(checkpoint),
        history=str(history_path),
        epochs_run=history.epochs_run,
        best_epoch=history.best_epoch,
        epoch_seconds=list(history.seconds),
        train_fertility=fertility_from_encodings(train_encodings, tokenizer.vocab.unk_id).to_dict(),
    )
    save_run_record(record, out_dir / RECORD_NAME)
    return model, record


# Comparison grid


def run_grid_cell(grid: ExperimentGrid, spec: TokenizerSpec, arch: Architecture) -> GridCell:
    """Train, reload and test one cell; failures become a marked cell instead of an exception."""
    run_name = f"{spec.name}-{arch.value}"
    try:
        splits = _read_splits(grid.train, grid.validation, grid.test)
        tokenizer = prepare_tokenizer(spec, splits)
        settings = replace(grid.settings, arch=arch)
        run_dir = grid.out / "runs" / run_name
        _, record = train_run(run_name, tokenizer, {k: v for k, v in splits.items() if k != "test"}, settings, run_dir)
        reloaded = load_checkpoint(record.checkpoint)
        report = evaluate(reloaded, splits["test"], tokenizer.segmenter, settings.train.strategy, settings.scheme)
        record.metrics = report.to_dict()
        record.metrics_split = "test"
        save_run_record(record, run_dir / RECORD_NAME)
        return GridCell(
            tokenizer=spec.name,
            arch=arch,
            report=report,
            param_count=record.param_count,
            train_seconds=record.train_seconds,
            fertility=report.fertility.fertility if report.fertility else None,
            unk_word_rate=report.fertility.unk_word_rate if report.fertility else None,
        )
    except (SubwordNerError, OSError, ValueError) as exc:
        logger.error("Run %s failed: %s", run_name, exc)
        return GridCell(tokenizer=spec.name, arch=arch, error=str(exc))


def run_grid(grid: ExperimentGrid) -> list[GridCell]:
    cells = grid.cells()
    if grid.workers <= 1:
        return [run_grid_cell(grid, spec, arch) for spec, arch in cells]
    with ProcessPoolExecutor(max_workers=grid.workers) as pool:
        futures = [pool.submit(run_grid_cell, grid, spec, arch) for spec, arch in cells]
        return [future.result() for future in futures]


def write_grid_reports(grid: ExperimentGrid, cells: Sequence[GridCell]) -> dict[str, Path]:
    strategy = grid.settings.train.strategy.value
    return {
        "markdown": write_text_atomic(
            grid.out / "compare.md",
            compare_markdown(cells, strategy=strategy, averaging=AVERAGING_NOTE, reference=grid.reference),
        ),
        "tsv": write_text_atomic(grid.out / "compare.tsv", compare_tsv(cells)),
        "f1": write_text_atomic(grid.out / "f1_by_tokenizer.tsv", f1_by_tokenizer_tsv(cells)),
    }


# Commands


def cmd_tokenize(args: argparse.Namespace) -> int:
    corpus = read_conll(args.input)
    mode = normalize_mode(args.mode)
    if mode is SegmentationMode.EXTERNAL:
        if args.segmentation is None:
            raise InvalidConfig("--segmentation is required with --mode external", path="--segmentation")
        encodings = load_external_segmentation(args.segmentation)
        vocab = external_vocab(encodings)
        segmenter: SegmenterLike = ExternalSegmenter(vocab, pair_external(corpus, encodings, path=str(args.segmentation)))
    elif args.vocab is not None:
        vocab = load_vocab(args.vocab)
        segmenter = Segmenter(vocab, mode)
    elif mode is SegmentationMode.WORD:
        vocab = build_word_vocab(corpus)
        segmenter = Segmenter(vocab, mode)
    else:
        raise InvalidConfig("--vocab is required with --mode subword", path="--vocab")

    encodings = [segmenter.encode(sentence.words) for sentence in corpus.sentences]
    shown = encodings if args.limit is None else encodings[: args.limit]
    for sentence, encoding in zip(corpus.sentences, shown):
        print(format_segmentation(sentence.words, encoding))
    stats = fertility_from_encodings(encodings, vocab.unk_id)
    print()
    print(f"sentences\t{len(encodings)}")
    print(f"words\t{stats.words_total}")
    print(f"subtokens\t{stats.subtokens_total}")
    print(f"fertility\t{stats.fertility:.4f}")
    print(f"unk_words\t{stats.unk_words}")
    print(f"unk_word_rate\t{stats.unk_word_rate:.4f}")
    print("pieces_per_word\t" + " ".join(f"{k}:{v}" for k, v in stats.pieces_histogram.items()))
    return EXIT_OK


def _tokenizer_spec_from_args(args: argparse.Namespace) -> TokenizerSpec:
    mode = normalize_mode(args.mode)
    if mode is SegmentationMode.WORD:
        return TokenizerSpec(name="word", kind="word")
    if mode is SegmentationMode.SUBWORD:
        if args.vocab is None:
            raise InvalidConfig("--vocab is required with --mode subword", path="--vocab")
        return TokenizerSpec(name=Path(args.vocab).stem, kind="wordpiece", location=Path(args.vocab))
    if args.segmentation is None:
        raise InvalidConfig("--segmentation DIR is required with --mode external", path="--segmentation")
    return TokenizerSpec(name=Path(args.segmentation).name, kind="external", location=Path(args.segmentation))


def cmd_train(args: argparse.Namespace) -> int:
    settings = load_train_settings(args.config).with_overrides(arch=args.arch, seed=args.seed, strategy=args.strategy)
    if args.progress:
        settings = replace(settings, train=replace(settings.train, progress=True))
    splits = _read_splits(Path(args.train), Path(args.validation) if args.validation else None)
    spec = _tokenizer_spec_from_args(args)
    tokenizer = prepare_tokenizer(spec, splits)
    out_dir = Path(args.out)
    run_name = args.name or f"{spec.name}-{settings.arch.value}"
    model, record = train_run(run_name, tokenizer, splits, settings, out_dir)
    if "validation" in splits:
        report = evaluate(model, splits["validation"], tokenizer.segmenter, settings.train.strategy, settings.scheme)
        record.metrics = report.to_dict()
        record.metrics_split = "validation"
        save_run_record(record, out_dir / RECORD_NAME)
    print(f"checkpoint\t{record.checkpoint}")
    print(f"history\t{record.history}")
    print(f"params\t{record.param_count}")
    print(f"epochs\t{record.epochs_run}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = read_conll(args.test, "test")
    strategy = normalize_strategy(args.strategy)
    scheme = None if args.scheme in {None, "none"} else normalize_scheme(args.scheme)
    model = load_checkpoint(args.checkpoint)
    segmenter = segmenter_for(model, corpus, args.segmentation)
    report = evaluate(model, corpus, segmenter, strategy, scheme)
    title = f"{Path(args.checkpoint).name} on {Path(args.test).name} ({model.arch.display}, {model.mode.value})"
    sys.stdout.write(eval_table(report, title=title))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(f".{strategy.value}.eval.tsv")
    write_text_atomic(out, eval_tsv(report))
    logger.info("Wrote %s", out)
    return EXIT_OK


def _read_sentences(path: Path, conll: bool) -> tuple[list[tuple[str, ...]], LabeledCorpus | None]:
    if conll:
        corpus = read_conll(path)
        return corpus.word_lists(), corpus
    sentences = [tuple(line.split()) for line in read_text(path).splitlines() if line.strip()]
    if not sentences:
        raise EmptyCorpus(path=str(path))
    return sentences, None


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    sentences, corpus = _read_sentences(Path(args.input), args.conll)
    if model.mode is SegmentationMode.EXTERNAL and corpus is None:
        corpus = LabeledCorpus(tuple(LabeledSentence(words, ("O",) * len(words)) for words in sentences))
    segmenter = segmenter_for(model, corpus, args.segmentation)
    tagged = predict_corpus(model, sentences, segmenter, normalize_strategy(args.strategy))
    text = "".join(
        "".join(f"{word}\t{label}\n" for word, label in zip(words, labels)) + "\n"
        for words, labels in zip(sentences, tagged)
    )
    if args.out:
        write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    grid = load_grid(args.grid)
    if args.out:
        grid = replace(grid, out=Path(args.out))
    if args.workers is not None:
        grid = replace(grid, workers=args.workers)
    if args.seed is not None:
        grid = replace(grid, settings=grid.settings.with_overrides(seed=args.seed))
    grid.validate()
    cells = run_grid(grid)
    paths = write_grid_reports(grid, cells)
    sys.stdout.write(read_text(paths["markdown"]))
    ok = sum(1 for cell in cells if cell.ok)
    logger.info("%d of %d runs succeeded", ok, len(cells))
    return EXIT_OK if ok else EXIT_TRAIN


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_synth_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    out = Path(args.out)
    splits = generate_splits(config, seed)
    for name, corpus in splits.items():
        save_conll(corpus, out / f"{name}.conll")
    vocab = vocab_from_tokens(synthetic_vocab(config, seed))
    write_vocab(vocab, out / "vocab.txt")
    grid_lines = [
        "train = train.conll",
        "test = test.conll",
        "tokenizers = word=word, wordpiece=wordpiece:vocab.txt",
        "archs = cnn",
        "out = grid-out",
        f"seed = {seed}",
    ]
    if "validation" in splits:
        grid_lines.insert(1, "validation = validation.conll")
    write_text_atomic(out / "grid.cfg", "\n".join(grid_lines) + "\n")
    for name, corpus in splits.items():
        stats = corpus_stats(corpus)
        print(f"{name}\tsentences={stats.sentence_count}\ttokens={stats.token_count}\ttags={stats.tag_count}")
    print(f"vocab\t{len(vocab)}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    vocab = load_vocab(args.vocab) if args.vocab else None
    for path in args.inputs:
        corpus = read_conll(path)
        stats = corpus_stats(corpus)
        print(f"{path}\tsentences={stats.sentence_count}\ttokens={stats.token_count}\ttags={stats.tag_count}")
        for label, count in stats.per_label_counts.items():
            print(f"  {label}\t{count}")
        if vocab is not None:
            segmenter = Segmenter(vocab, args.mode)
            fertility = fertility_from_encodings((segmenter.encode(s.words) for s in corpus.sentences), vocab.unk_id)
            print(f"  fertility\t{fertility.fertility:.4f}\tunk_word_rate\t{fertility.unk_word_rate:.4f}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from subwordner.main import create_app

    uvicorn.run(create_app(args.checkpoint), host=args.host, port=args.port)
    return EXIT_OK


# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subwordner", description="Subword-tokenized shallow NER taggers.")
    parser.add_argument("--log-level", default="INFO", help="Logging level written to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    tokenize = commands.add_parser("tokenize", help="Show segmentations and fertility for a CoNLL file")
    tokenize.add_argument("--input", required=True, help="CoNLL file")
    tokenize.add_argument("--vocab", help="WordPiece vocab file (one token per line)")
    tokenize.add_argument("--mode", default="subword", help="subword, word or external")
    tokenize.add_argument("--segmentation", help="External segmentation file (JSON lines)")
    tokenize.add_argument("--limit", type=int, help="Only list the first N sentences")
    tokenize.set_defaults(handler=cmd_tokenize)

    train_cmd = commands.add_parser("train", help="Train one tagger")
    train_cmd.add_argument("--train", required=True, help="Training CoNLL file")
    train_cmd.add_argument("--validation", help="Validation CoNLL file (enables early stopping)")
    train_cmd.add_argument("--mode", default="subword", help="subword, word or external")
    train_cmd.add_argument("--vocab", help="WordPiece vocab file for --mode subword")
    train_cmd.add_argument(
        "--segmentation",
        help="Directory with " + ", ".join(EXTERNAL_FILES.values()) + " for --mode external",
    )
    train_cmd.add_argument("--arch", help="cnn, lstm or bilstm")
    train_cmd.add_argument("--config", help="Train config file (key = value)")
    train_cmd.add_argument("--seed", type=int)
    train_cmd.add_argument("--strategy", help="Clubbing strategy for validation: first or majority")
    train_cmd.add_argument("--name", help="Run name recorded in run.json")
    train_cmd.add_argument("--progress", action="store_true", help="Show a progress bar per epoch")
    train_cmd.add_argument("--out", required=True, help="Output directory")
    train_cmd.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", help="Tag sentences with a checkpoint")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--input", required=True, help="One sentence per line, or CoNLL with --conll")
    predict.add_argument("--conll", action="store_true", help="Input is CoNLL; tags are ignored")
    predict.add_argument("--strategy", default="first")
    predict.add_argument("--segmentation", help="External segmentation file for the input")
    predict.add_argument("--out", help="Write CoNLL output here instead of stdout")
    predict.set_defaults(handler=cmd_predict)

    eval_cmd = commands.add_parser("eval", help="Score a checkpoint on a labeled CoNLL file")
    eval_cmd.add_argument("--checkpoint", required=True)
    eval_cmd.add_argument("--test", required=True)
    eval_cmd.add_argument("--strategy", default="first")
    eval_cmd.add_argument("--scheme", default="bio", help="bio, flat or none")
    eval_cmd.add_argument("--segmentation", help="External segmentation file for the test file")
    eval_cmd.add_argument("--out", help="TSV report path")
    eval_cmd.set_defaults(handler=cmd_eval)

    compare = commands.add_parser("compare", help="Run a tokenizer x architecture grid")
    compare.add_argument("--grid", "--config", dest="grid", required=True, help="Grid file (key = value)")
    compare.add_argument("--out", help="Override the grid's output directory")
    compare.add_argument("--workers", type=int, help="Parallel runs (each single-threaded)")
    compare.add_argument("--seed", type=int)
    compare.set_defaults(handler=cmd_compare)

    synth = commands.add_parser("synth", help="Write a synthetic suffix-inflected corpus and vocab")
    synth.add_argument("--config", help="Synthetic corpus config file (key = value)")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out", required=True, help="Output directory")
    synth.set_defaults(handler=cmd_synth)

    stats = commands.add_parser("stats", help="Corpus statistics")
    stats.add_argument("inputs", nargs="+", help="CoNLL files")
    stats.add_argument("--vocab", help="Also report fertility under this vocab")
    stats.add_argument("--mode", default="subword")
    stats.set_defaults(handler=cmd_stats)

    serve = commands.add_parser("serve", help="Serve /predict and /tokenize over HTTP")
    serve.add_argument("--checkpoint", required=True)
    serve.add_argument("--host", default="127.0.0.1", help="Host to bind")
    serve.add_argument("--port", type=int, default=8000, help="Port to bind")
    serve.set_defaults(handler=cmd_serve)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _print_issues(issues: list[Issue]) -> None:
    sys.stderr.write(json.dumps(build_report(issues), indent=2, ensure_ascii=False) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except SubwordNerError as exc:
        _print_issues([exc.to_issue()])
        if isinstance(exc, INPUT_ERRORS):
            return EXIT_INPUT
        return COMMAND_EXIT.get(args.command, EXIT_INPUT)
    except OSError as exc:
        _print_issues(
            [
                issue(
                    path=str(exc.filename or ""),
                    issue_type="FILE_ERROR",
                    expected="readable file",
                    actual=type(exc).__name__,
                    description=f"{exc.strerror or exc}: {exc.filename}",
                )
            ]
        )
        return EXIT_INPUT
    except ValueError as exc:
        _print_issues([issue(path=args.command, issue_type="INVALID_ARGUMENT", expected="", actual="", description=str(exc))])
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())

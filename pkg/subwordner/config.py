"""Flat ``key = value`` configuration files for training, synthetic corpora and comparison grids."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from subwordner.corpus import SynthConfig
from subwordner.errors import InvalidConfig, InvalidHyper
from subwordner.files import read_text
from subwordner.rules import (
    Architecture,
    ClubbingStrategy,
    SpanScheme,
    normalize_arch,
    normalize_scheme,
    normalize_strategy,
)
from subwordner.taggers import Hyperparams, TrainConfig


HYPER_KEYS = {
    "embed_dim": int,
    "conv_filters": int,
    "conv_kernel": int,
    "lstm_hidden": int,
    "bilstm_hidden": int,
    "rho": float,
    "epsilon": float,
    "dtype": str,
}
SHARED_KEYS = {"batch_size": int, "learning_rate": float, "epochs": int, "seed": int}
TRAIN_ONLY_KEYS = {"max_len": int, "patience": int, "clip_norm": float}
TRAIN_KEYS = {"arch", "strategy", "scheme", "progress", *HYPER_KEYS, *SHARED_KEYS, *TRAIN_ONLY_KEYS}
SYNTH_KEYS = {
    "classes",
    "suffixes",
    "stems_per_class",
    "n_train",
    "n_validation",
    "n_test",
    "len_min",
    "len_max",
    "oov_rate",
    "fillers",
    "entity_rate",
    "seed",
}
GRID_KEYS = {"train", "validation", "test", "tokenizers", "archs", "out", "workers", "reference"} | (
    TRAIN_KEYS - {"arch"}
)
TOKENIZER_KINDS = ("word", "wordpiece", "external")
EXTERNAL_FILES = {"train": "train.jsonl", "validation": "validation.jsonl", "test": "test.jsonl"}


@dataclass(frozen=True)
class ConfigValues:
    """Parsed key/value pairs with the line each came from."""

    values: dict[str, str]
    lines: dict[str, int]
    path: str = ""

    def where(self, key: str) -> str:
        line = self.lines.get(key)
        if line is None:
            return key
        return f"{self.path}:{line}" if self.path else f"line {line}"

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def convert(self, key: str, kind: Callable[[str], Any]) -> Any:
        raw = self.values[key]
        try:
            return kind(raw)
        except ValueError as exc:
            raise InvalidConfig(
                f"{key}: {exc}" if kind not in {int, float} else f"{key} must be {kind.__name__}, got {raw!r}",
                path=self.where(key),
                expected=kind.__name__,
                actual=raw,
            ) from None


def parse_key_values(text: str, *, path: str = "", allowed: set[str] | None = None) -> ConfigValues:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        if "=" not in line:
            raise InvalidConfig(f"Line {line_no}: expected 'key = value'.", path=where, actual=line)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidConfig(f"Line {line_no}: empty key.", path=where, actual=line)
        if key in values:
            raise InvalidConfig(
                f"Line {line_no}: duplicate key {key!r} (first set on line {lines[key]}).",
                path=where,
                actual=key,
            )
        if allowed is not None and key not in allowed:
            raise InvalidConfig(
                f"Line {line_no}: unknown key {key!r}.",
                path=where,
                expected=", ".join(sorted(allowed)),
                actual=key,
            )
        values[key] = value
        lines[key] = line_no
    return ConfigValues(values=values, lines=lines, path=path)


def read_key_values(path: str | Path, allowed: set[str] | None = None) -> ConfigValues:
    return parse_key_values(read_text(path), path=str(path), allowed=allowed)


def parse_bool(value: str) -> bool:
    cleaned = value.strip().lower()
    if cleaned in {"1", "true", "yes", "on"}:
        return True
    if cleaned in {"0", "false", "no", "off"}:
        return False
    raise ValueError("expected true or false")


def _parse_scheme(value: str) -> SpanScheme | None:
    if value.strip().lower() == "none":
        return None
    return normalize_scheme(value)


@dataclass(frozen=True)
class TrainSettings:
    arch: Architecture = Architecture.CNN
    hyper: Hyperparams = field(default_factory=Hyperparams)
    train: TrainConfig = field(default_factory=TrainConfig)
    scheme: SpanScheme | None = SpanScheme.BIO

    def with_overrides(
        self,
        *,
        arch: str | None = None,
        seed: int | None = None,
        strategy: str | None = None,
    ) -> TrainSettings:
        settings = self
        if arch is not None:
            settings = replace(settings, arch=_normalized("arch", arch, normalize_arch))
        if seed is not None:
            settings = replace(
                settings,
                hyper=replace(settings.hyper, seed=seed),
                train=replace(settings.train, seed=seed),
            )
        if strategy is not None:
            settings = replace(settings, train=replace(settings.train, strategy=_normalized("strategy", strategy, normalize_strategy)))
        return settings

    def snapshot(self) -> dict[str, Any]:
        return {
            "arch": self.arch.value,
            "hyper": self.hyper.to_dict(),
            "train": self.train.to_dict(),
            "scheme": None if self.scheme is None else self.scheme.value,
        }


def _normalized(key: str, value: str, normalizer: Callable[[str], Any], where: str = "") -> Any:
    try:
        return normalizer(value)
    except ValueError as exc:
        raise InvalidConfig(str(exc), path=where or key, actual=value) from None


def train_settings(config: ConfigValues | None = None) -> TrainSettings:
    """Build hyperparameters and the training schedule from parsed values; unset keys keep defaults."""
    config = config or ConfigValues({}, {})
    hyper_args: dict[str, Any] = {}
    train_args: dict[str, Any] = {}
    for key, kind in HYPER_KEYS.items():
        if key in config.values:
            hyper_args[key] = config.convert(key, kind)
    for key, kind in SHARED_KEYS.items():
        if key in config.values:
            hyper_args[key] = train_args[key] = config.convert(key, kind)
    for key, kind in TRAIN_ONLY_KEYS.items():
        if key in config.values:
            train_args[key] = config.convert(key, kind)
    if "strategy" in config.values:
        train_args["strategy"] = _normalized("strategy", config.values["strategy"], normalize_strategy, config.where("strategy"))
    if "progress" in config.values:
        train_args["progress"] = config.convert("progress", parse_bool)

    hyper = Hyperparams(**hyper_args)
    settings = TrainSettings(hyper=hyper, train=TrainConfig.from_hyper(hyper, **train_args))
    if "arch" in config.values:
        settings = replace(settings, arch=_normalized("arch", config.values["arch"], normalize_arch, config.where("arch")))
    if "scheme" in config.values:
        settings = replace(settings, scheme=_normalized("scheme", config.values["scheme"], _parse_scheme, config.where("scheme")))

    try:
        settings.hyper.validate()
    except InvalidHyper as exc:
        raise InvalidConfig(exc.description, path=config.where(exc.path), actual=exc.actual) from None
    settings.train.validate()
    return settings


def load_train_settings(path: str | Path | None) -> TrainSettings:
    if path is None:
        return train_settings()
    return train_settings(read_key_values(path, TRAIN_KEYS))


def _parse_suffixes(value: str) -> dict[str, tuple[str, ...]]:
    table: dict[str, tuple[str, ...]] = {}
    for chunk in value.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ValueError(f"expected CLASS:suffix|suffix, got {chunk!r}")
        name, options = chunk.split(":", 1)
        table[name.strip()] = tuple(s.strip() for s in options.split("|") if s.strip())
    return table


def synth_config(config: ConfigValues | None = None) -> SynthConfig:
    config = config or ConfigValues({}, {})
    args: dict[str, Any] = {}
    for key in ("stems_per_class", "n_train", "n_validation", "n_test", "len_min", "len_max", "fillers", "seed"):
        if key in config.values:
            args[key] = config.convert(key, int)
    for key in ("oov_rate", "entity_rate"):
        if key in config.values:
            args[key] = config.convert(key, float)
    if "classes" in config.values:
        args["classes"] = tuple(name.strip() for name in config.values["classes"].split(",") if name.strip())
    if "suffixes" in config.values:
        args["suffixes"] = config.convert("suffixes", _parse_suffixes)
    synth = SynthConfig(**args)
    synth.validate()
    return synth


def load_synth_config(path: str | Path | None) -> SynthConfig:
    if path is None:
        return synth_config()
    return synth_config(read_key_values(path, SYNTH_KEYS))


@dataclass(frozen=True)
class TokenizerSpec:
    """``word`` baseline, a WordPiece vocab file, or a directory of external segmentations."""

    name: str
    kind: str
    location: Path | None = None

    def external_file(self, split: str) -> Path:
        if self.kind != "external" or self.location is None:
            raise InvalidConfig(f"tokenizer {self.name!r} has no external segmentations", path=self.name)
        return self.location / EXTERNAL_FILES[split]


def parse_tokenizer_spec(text: str, *, base_dir: Path | None = None) -> TokenizerSpec:
    if "=" not in text:
        raise ValueError(f"expected name=spec, got {text!r}")
    name, spec = (part.strip() for part in text.split("=", 1))
    if not name:
        raise ValueError(f"tokenizer entry {text!r} has no name")
    kind, _, location = spec.partition(":")
    kind = kind.strip().lower()
    if kind not in TOKENIZER_KINDS:
        raise ValueError("tokenizer kind must be one of: " + ", ".join(TOKENIZER_KINDS))
    if kind == "word":
        if location:
            raise ValueError("the word tokenizer takes no path")
        return TokenizerSpec(name=name, kind=kind)
    if not location.strip():
        raise ValueError(f"tokenizer {name!r} needs a path after '{kind}:'")
    path = Path(location.strip())
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return TokenizerSpec(name=name, kind=kind, location=path)


@dataclass(frozen=True)
class ExperimentGrid:
    train: Path
    test: Path
    tokenizers: tuple[TokenizerSpec, ...]
    archs: tuple[Architecture, ...]
    out: Path
    settings: TrainSettings = field(default_factory=TrainSettings)
    validation: Path | None = None
    workers: int = 1
    reference: tuple[tuple[str, float], ...] = ()

    def validate(self) -> None:
        if not self.tokenizers:
            raise InvalidConfig("grid needs at least one tokenizer", path="tokenizers")
        if not self.archs:
            raise InvalidConfig("grid needs at least one architecture", path="archs")
        names = [spec.name for spec in self.tokenizers]
        if len(set(names)) != len(names):
            raise InvalidConfig("tokenizer names must be distinct", path="tokenizers", actual=",".join(names))
        if len(set(self.archs)) != len(self.archs):
            raise InvalidConfig("architectures must be distinct", path="archs")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1", path="workers", actual=str(self.workers))

    def cells(self) -> list[tuple[TokenizerSpec, Architecture]]:
        return [(spec, arch) for spec in self.tokenizers for arch in self.archs]


def _parse_reference(value: str) -> tuple[tuple[str, float], ...]:
    entries = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, sep, score = chunk.partition("=")
        if not sep:
            raise ValueError(f"expected name=F1, got {chunk!r}")
        entries.append((name.strip(), float(score)))
    return tuple(entries)


def experiment_grid(config: ConfigValues, base_dir: Path | None = None) -> ExperimentGrid:
    for key in ("train", "test", "tokenizers", "archs"):
        if key not in config.values:
            raise InvalidConfig(f"grid is missing required key {key!r}", path=config.path or key, expected=key)

    def resolve(value: str) -> Path:
        path = Path(value)
        return base_dir / path if base_dir is not None and not path.is_absolute() else path

    tokenizers = tuple(
        _normalized(
            "tokenizers",
            entry,
            lambda text: parse_tokenizer_spec(text, base_dir=base_dir),
            config.where("tokenizers"),
        )
        for entry in config.values["tokenizers"].split(",")
        if entry.strip()
    )
    archs = tuple(
        _normalized("archs", name, normalize_arch, config.where("archs"))
        for name in config.values["archs"].split(",")
        if name.strip()
    )
    shared = ConfigValues(
        {k: v for k, v in config.values.items() if k in TRAIN_KEYS},
        {k: v for k, v in config.lines.items() if k in TRAIN_KEYS},
        config.path,
    )
    grid = ExperimentGrid(
        train=resolve(config.values["train"]),
        test=resolve(config.values["test"]),
        validation=resolve(config.values["validation"]) if config.values.get("validation") else None,
        tokenizers=tokenizers,
        archs=archs,
        out=resolve(config.values.get("out", "grid-out")),
        settings=train_settings(shared),
        workers=config.convert("workers", int) if "workers" in config.values else 1,
        reference=config.convert("reference", _parse_reference) if "reference" in config.values else (),
    )
    grid.validate()
    return grid


def load_grid(path: str | Path) -> ExperimentGrid:
    path = Path(path)
    return experiment_grid(read_key_values(path, GRID_KEYS), base_dir=path.parent)

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from subwordner.rules import Architecture

if TYPE_CHECKING:
    from subwordner.metrics import EvalReport


BASE_DIR = Path(__file__).resolve().parent
TEMPLATES_DIR = BASE_DIR / "templates"


@dataclass(frozen=True)
class Issue:
    path: str
    issueType: str
    expected: str
    actual: str
    description: str


def issue(
    *,
    path: str,
    issue_type: str,
    expected: str,
    actual: str,
    description: str,
) -> Issue:
    return Issue(
        path=path,
        issueType=issue_type,
        expected=expected,
        actual=actual,
        description=description,
    )


def build_report(errors: list[Issue]) -> dict:
    if not errors:
        return {"ok": True}
    return {
        "ok": False,
        "totalErrors": len(errors),
        "errors": [asdict(e) for e in errors],
    }


@dataclass(frozen=True)
class GridCell:
    """One tokenizer x architecture run of a comparison grid."""

    tokenizer: str
    arch: Architecture
    report: EvalReport | None = None
    param_count: int | None = None
    train_seconds: float | None = None
    fertility: float | None = None
    unk_word_rate: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None and self.error is None

    @property
    def run_name(self) -> str:
        return f"{self.tokenizer}-{self.arch.value}"


def _fmt(value: float | None, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


_environment: Environment | None = None


def environment() -> Environment:
    global _environment
    if _environment is None:
        env = Environment(
            loader=FileSystemLoader(str(TEMPLATES_DIR)),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
            autoescape=False,
        )
        env.filters["fmt"] = _fmt
        env.filters["pct"] = _pct
        _environment = env
    return _environment


def render(template: str, **context: Any) -> str:
    return environment().get_template(template).render(**context)


# Evaluation reports


def eval_rows(report: EvalReport) -> list[tuple[str, float, float, float, int]]:
    """Per-class rows followed by macro, micro and accuracy footer rows.

    Accuracy is micro P/R/F1 over every label including O, so it fills all three columns.
    """
    rows = [(label, s.precision, s.recall, s.f1, s.support) for label, s in sorted(report.per_class.items())]
    rows.append(("macro", report.macro.precision, report.macro.recall, report.macro.f1, report.macro.support))
    rows.append(("micro", report.micro.precision, report.micro.recall, report.micro.f1, report.micro.support))
    rows.append(("accuracy", report.accuracy, report.accuracy, report.accuracy, report.token_count))
    return rows


def eval_tsv(report: EvalReport) -> str:
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for name, precision, recall, f1, support in eval_rows(report):
        lines.append(f"{name}\t{precision:.4f}\t{recall:.4f}\t{f1:.4f}\t{support}")
    return "\n".join(lines) + "\n"


def eval_table(report: EvalReport, *, title: str = "") -> str:
    span_rows: list[tuple[str, float, float, float, int]] = []
    if report.spans is not None:
        span_rows = [
            (label, s.precision, s.recall, s.f1, s.support) for label, s in sorted(report.spans.per_class.items())
        ]
        span_rows.append(("macro", report.spans.macro.precision, report.spans.macro.recall, report.spans.macro.f1, report.spans.macro.support))
        span_rows.append(("micro", report.spans.micro.precision, report.spans.micro.recall, report.spans.micro.f1, report.spans.micro.support))
    width = max([len(row[0]) for row in eval_rows(report) + span_rows] + [8])
    return render(
        "eval_table.txt.j2",
        title=title,
        report=report,
        rows=eval_rows(report),
        span_rows=span_rows,
        width=width,
    )


# Comparison harness


def _ordered_axes(cells: Sequence[GridCell]) -> tuple[list[str], list[Architecture]]:
    tokenizers = list(dict.fromkeys(cell.tokenizer for cell in cells))
    archs = list(dict.fromkeys(cell.arch for cell in cells))
    return tokenizers, archs


def best_f1_by_arch(cells: Sequence[GridCell]) -> dict[Architecture, float]:
    best: dict[Architecture, float] = {}
    for cell in cells:
        if cell.ok:
            f1 = cell.report.macro.f1
            if f1 > best.get(cell.arch, -1.0):
                best[cell.arch] = f1
    return best


def compare_markdown(
    cells: Sequence[GridCell],
    *,
    strategy: str,
    averaging: str,
    reference: Sequence[tuple[str, float]] = (),
) -> str:
    tokenizers, archs = _ordered_axes(cells)
    lookup = {(cell.tokenizer, cell.arch): cell for cell in cells}
    best = best_f1_by_arch(cells)
    matrix = []
    for name in tokenizers:
        row = []
        for arch in archs:
            cell = lookup.get((name, arch))
            if cell is None or not cell.ok:
                row.append({"failed": True, "missing": cell is None})
                continue
            report = cell.report
            f1 = _pct(report.macro.f1)
            row.append(
                {
                    "failed": False,
                    "f1": f"**{f1}**" if report.macro.f1 == best.get(arch) else f1,
                    "precision": _pct(report.macro.precision),
                    "recall": _pct(report.macro.recall),
                    "accuracy": _pct(report.accuracy),
                }
            )
        matrix.append((name, row))
    return render(
        "compare.md.j2",
        archs=archs,
        matrix=matrix,
        cells=cells,
        strategy=strategy,
        averaging=averaging,
        reference=list(reference),
    )


def compare_tsv(cells: Sequence[GridCell]) -> str:
    lines = [
        "tokenizer\tarch\tstatus\tf1\tprecision\trecall\taccuracy\tmicro_f1\tparams\tfertility\tunk_word_rate\ttrain_seconds"
    ]
    for cell in cells:
        if not cell.ok:
            lines.append(f"{cell.tokenizer}\t{cell.arch.display}\tfailed" + "\t-" * 9)
            continue
        report = cell.report
        lines.append(
            "\t".join(
                [
                    cell.tokenizer,
                    cell.arch.display,
                    "ok",
                    f"{report.macro.f1:.4f}",
                    f"{report.macro.precision:.4f}",
                    f"{report.macro.recall:.4f}",
                    f"{report.accuracy:.4f}",
                    f"{report.micro.f1:.4f}",
                    str(cell.param_count) if cell.param_count is not None else "-",
                    _fmt(cell.fertility),
                    _fmt(cell.unk_word_rate),
                    _fmt(cell.train_seconds, 2),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def f1_by_tokenizer_tsv(cells: Sequence[GridCell]) -> str:
    """tokenizer x architecture F1 series for external plotting."""
    tokenizers, archs = _ordered_axes(cells)
    lookup = {(cell.tokenizer, cell.arch): cell for cell in cells}
    lines = ["tokenizer\t" + "\t".join(arch.display for arch in archs)]
    for name in tokenizers:
        values = []
        for arch in archs:
            cell = lookup.get((name, arch))
            values.append(f"{cell.report.macro.f1:.4f}" if cell is not None and cell.ok else "failed")
        lines.append(name + "\t" + "\t".join(values))
    return "\n".join(lines) + "\n"

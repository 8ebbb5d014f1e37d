from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .errors import ConfigError
from .modalities import ModalityUniverse
from .schema import MetricsReport

logger = logging.getLogger(__name__)

SECTIONS = ("summary", "overlap", "matched", "best-eval", "points")
DEFAULT_SECTIONS = ("summary", "best-eval")
SUMMARY_COLUMNS: Tuple[Tuple[str, str, str], ...] = (
    ("overall", "best_performance", "P_best"),
    ("overall", "best_robustness", "R_best"),
    ("overall", "performance", "P"),
    ("overall", "robustness", "R"),
    ("missing", "performance", "Missing P"),
    ("missing", "robustness", "Missing R"),
    ("added", "performance", "Added P"),
    ("added", "robustness", "Added R"),
    ("transfer", "performance", "Transfer P"),
    ("transfer", "robustness", "Transfer R"),
)
MISSING_VALUE = "-"


def parse_sections(text: Optional[str]) -> List[str]:
    """`--strata` 값 (쉼표 구분) → 섹션 목록"""
    if not text:
        return list(DEFAULT_SECTIONS)
    sections = [part.strip() for part in text.split(",") if part.strip()]
    if "all" in sections:
        return list(SECTIONS)
    unknown = [section for section in sections if section not in SECTIONS]
    if unknown:
        raise ConfigError(f"--strata: 알 수 없는 섹션 {unknown} ({', '.join(SECTIONS)}, all)")
    return sections


def format_value(value: Optional[float], percent: bool = True) -> str:
    if value is None:
        return MISSING_VALUE
    return f"{100.0 * value:.1f}" if percent else f"{value:.4f}"


def _aggregate_value(report: MetricsReport, stratum: str, attr: str) -> Optional[float]:
    aggregate = report.aggregates.get(stratum)
    return None if aggregate is None else getattr(aggregate, attr)


def summary_row(report: MetricsReport, percent: bool = True) -> List[str]:
    return [format_value(_aggregate_value(report, stratum, attr), percent) for stratum, attr, _ in SUMMARY_COLUMNS]


def _markdown_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return lines


def _indexed(report: MetricsReport, prefix: str) -> List[Tuple[int, str]]:
    found = []
    for stratum in report.aggregates:
        if stratum.startswith(prefix + "-"):
            found.append((int(stratum.split("-", 1)[1]), stratum))
    return sorted(found)


def _train_order(report: MetricsReport) -> List[str]:
    universe = ModalityUniverse(tuple(report.universe))
    labels = set(report.best_eval)
    for rows in report.per_train.values():
        labels.update(rows)
    return [m.label for m in universe.subsets() if m.label in labels]


def render_markdown(reports: Sequence[MetricsReport], sections: Sequence[str] = DEFAULT_SECTIONS, percent: bool = True) -> str:
    lines: List[str] = []
    unit = "%" if percent else "fraction"
    if "summary" in sections:
        lines.append(f"## Performance / Robustness ({unit})")
        lines.append("")
        lines.extend(
            _markdown_table(
                ["Method"] + [title for _, _, title in SUMMARY_COLUMNS],
                ([report.method] + summary_row(report, percent) for report in reports),
            )
        )
        lines.append("")
    if "overlap" in sections:
        for report in reports:
            lines.append(f"## Overlap-k: {report.method}")
            lines.append("")
            rows = [
                [str(k)] + [format_value(_aggregate_value(report, stratum, attr), percent) for attr in ("performance", "robustness")]
                for k, stratum in _indexed(report, "overlap")
            ]
            lines.extend(_markdown_table(["k", "P", "R"], rows))
            lines.append("")
    if "matched" in sections:
        for report in reports:
            lines.append(f"## Matched size: {report.method}")
            lines.append("")
            rows = [
                [str(k), format_value(_aggregate_value(report, stratum, "performance"), percent)]
                for k, stratum in _indexed(report, "matched")
            ]
            lines.extend(_markdown_table(["|M_T| = |M_E|", "P"], rows))
            lines.append("")
    if "best-eval" in sections:
        lines.append("## Best evaluation set")
        lines.append("")
        order = _train_order(reports[0]) if reports else []
        rows = [[report.method] + [report.best_eval.get(label, MISSING_VALUE) for label in order] for report in reports]
        lines.extend(_markdown_table(["Method"] + order, rows))
        lines.append("")
    if "points" in sections:
        for report in reports:
            lines.append(f"## (R, P) points: {report.method}")
            lines.append("")
            overall = report.per_train.get("overall", {})
            rows = [
                [label, format_value(score.performance if score else None, percent), format_value(score.robustness if score else None, percent)]
                for label, score in ((label, overall.get(label)) for label in _train_order(report))
            ]
            lines.extend(_markdown_table(["M_T", "P", "R"], rows))
            lines.append("")
    notes = sorted({warning.message for report in reports for warning in report.warnings})
    if notes:
        lines.append("## Notes")
        lines.append("")
        lines.extend(f"- {note}" for note in notes)
        lines.append("")
    return "\n".join(lines)


def render_csv(reports: Sequence[MetricsReport], percent: bool = False) -> str:
    """method,stratum,scope,P,R,P_best,R_best,best_eval (scope 는 aggregate 또는 M_T 라벨)"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method", "stratum", "scope", "P", "R", "P_best", "R_best", "best_eval"])

    def cell(value: Optional[float]) -> str:
        if value is None:
            return ""
        return f"{100.0 * value:.4f}" if percent else f"{value:.6f}"

    for report in reports:
        for stratum, aggregate in report.aggregates.items():
            if aggregate is not None:
                writer.writerow(
                    [report.method, stratum, "aggregate"]
                    + [cell(v) for v in (aggregate.performance, aggregate.robustness, aggregate.best_performance, aggregate.best_robustness)]
                    + [""]
                )
            for label in _train_order(report):
                score = report.per_train.get(stratum, {}).get(label)
                if score is not None:
                    writer.writerow([report.method, stratum, label, cell(score.performance), cell(score.robustness), "", "", ""])
        for label, best in report.best_eval.items():
            writer.writerow([report.method, "best-eval", label, "", "", "", "", best])
    return buffer.getvalue()


def write_report(
    reports: Sequence[MetricsReport],
    out_prefix: Union[str, Path],
    sections: Sequence[str] = DEFAULT_SECTIONS,
    percent: bool = True,
) -> Tuple[Path, Path]:
    """<prefix>.md 와 <prefix>.csv 를 나란히 기록"""
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    md_path = prefix.with_name(prefix.name + ".md")
    csv_path = prefix.with_name(prefix.name + ".csv")
    md_path.write_text(render_markdown(reports, sections, percent), encoding="utf-8")
    csv_path.write_text(render_csv(reports, percent), encoding="utf-8")
    logger.info("보고서 저장: %s, %s", md_path, csv_path)
    return md_path, csv_path

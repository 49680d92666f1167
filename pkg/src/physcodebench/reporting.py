"""Aggregation over passes, breakdown tables and the statistical validators.

Entry means are unweighted; per-domain breakdowns count multi-domain
entries in every carried domain (honoring the per-entry primary override).
The error histogram pairs each error class with the fraction of its
failures that a later step in the same run fixed.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field

import numpy as np

from .benchdata import Dataset
from .physcodeeval import ScoreCard


class ReportingError(Exception):
    """Raised for empty or inconsistent inputs to an aggregation."""


@dataclass(frozen=True)
class ErrorStats:
    count: int
    frequency: float  # fraction of all classified failures
    corrected: int
    correction_success_rate: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "frequency": self.frequency,
            "corrected": self.corrected,
            "correction_success_rate": self.correction_success_rate,
        }


@dataclass(frozen=True)
class AggregateReport:
    per_entry: dict  # entry_id -> mean ScoreCard
    overall: float
    code_based: float
    visual_based: float
    difficulty_breakdown: dict  # difficulty -> mean total
    domain_breakdown: dict  # domain -> mean total
    error_histogram: dict  # error class -> ErrorStats
    n_entries: int
    n_records: int

    def to_dict(self) -> dict:
        return {
            "per_entry": {k: v.to_dict() for k, v in self.per_entry.items()},
            "overall": self.overall,
            "code_based": self.code_based,
            "visual_based": self.visual_based,
            "difficulty_breakdown": dict(self.difficulty_breakdown),
            "domain_breakdown": dict(self.domain_breakdown),
            "error_histogram": {k: v.to_dict() for k, v in self.error_histogram.items()},
            "n_entries": self.n_entries,
            "n_records": self.n_records,
        }

    @classmethod
    def from_dict(cls, data: dict) -> AggregateReport:
        return cls(
            per_entry={k: ScoreCard.from_dict(v) for k, v in data["per_entry"].items()},
            overall=data["overall"],
            code_based=data["code_based"],
            visual_based=data["visual_based"],
            difficulty_breakdown=dict(data["difficulty_breakdown"]),
            domain_breakdown=dict(data["domain_breakdown"]),
            error_histogram={
                k: ErrorStats(**v) for k, v in data["error_histogram"].items()
            },
            n_entries=data["n_entries"],
            n_records=data["n_records"],
        )


def _mean_card(cards: list[ScoreCard]) -> ScoreCard:
    return ScoreCard.build(
        statistics.fmean(c.s_exec for c in cards),
        statistics.fmean(c.s_file for c in cards),
        statistics.fmean(c.s_clip for c in cards),
        statistics.fmean(c.s_motion for c in cards),
    )


def _error_histogram(records) -> dict:
    counts: dict[str, int] = {}
    corrected: dict[str, int] = {}
    for record in records:
        steps = record.steps
        for index, step in enumerate(steps):
            execution = step.execution
            if execution is None or execution.outcome == "success":
                continue
            error_class = execution.error_class or "other"
            counts[error_class] = counts.get(error_class, 0) + 1
            fixed = any(
                later.execution is not None and later.execution.outcome == "success"
                for later in steps[index + 1:]
            )
            if fixed:
                corrected[error_class] = corrected.get(error_class, 0) + 1
    total = sum(counts.values())
    histogram = {}
    for error_class in sorted(counts):
        count = counts[error_class]
        fixed = corrected.get(error_class, 0)
        histogram[error_class] = ErrorStats(
            count=count,
            frequency=count / total,
            corrected=fixed,
            correction_success_rate=fixed / count,
        )
    return histogram


def aggregate(records, entries: Dataset | dict | None = None) -> AggregateReport:
    """Mean scorecard per entry, overall means and breakdown tables.

    ``entries`` (a Dataset or an id->entry mapping) enables the difficulty
    and domain breakdowns; without it they are empty.
    """
    records = list(records)
    if not records:
        raise ReportingError("cannot aggregate zero records")

    grouped: dict[str, list] = {}
    for record in records:
        grouped.setdefault(record.entry_id, []).append(record)
    pass_counts = {len(group) for group in grouped.values()}
    if len(pass_counts) > 1:
        raise ReportingError(f"unequal pass counts per entry: {sorted(pass_counts)}")

    per_entry = {
        entry_id: _mean_card([r.scorecard for r in group])
        for entry_id, group in sorted(grouped.items())
    }
    overall = statistics.fmean(card.total for card in per_entry.values())
    code_based = statistics.fmean(card.code_based for card in per_entry.values())
    visual_based = statistics.fmean(card.visual_based for card in per_entry.values())

    lookup = {}
    if isinstance(entries, Dataset):
        lookup = {entry.id: entry for entry in entries}
    elif entries:
        lookup = dict(entries)

    difficulty_totals: dict[str, list[float]] = {}
    domain_totals: dict[str, list[float]] = {}
    for entry_id, card in per_entry.items():
        entry = lookup.get(entry_id)
        if entry is None:
            continue
        difficulty_totals.setdefault(entry.difficulty, []).append(card.total)
        for domain in entry.counted_domains:
            domain_totals.setdefault(domain, []).append(card.total)

    return AggregateReport(
        per_entry=per_entry,
        overall=overall,
        code_based=code_based,
        visual_based=visual_based,
        difficulty_breakdown={
            k: statistics.fmean(v) for k, v in sorted(difficulty_totals.items())
        },
        domain_breakdown={k: statistics.fmean(v) for k, v in sorted(domain_totals.items())},
        error_histogram=_error_histogram(records),
        n_entries=len(per_entry),
        n_records=len(records),
    )


@dataclass(frozen=True)
class CorrelationReport:
    rho: float
    n: int


def _average_ranks(values) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    position = 0
    sorted_values = np.asarray(values)[order]
    while position < len(values):
        end = position
        while end + 1 < len(values) and sorted_values[end + 1] == sorted_values[position]:
            end += 1
        # ties share the average of their 1-based positions
        ranks[order[position:end + 1]] = (position + end) / 2.0 + 1.0
        position = end + 1
    return ranks


def spearman(x, y) -> CorrelationReport:
    """Rank correlation with average ranks for ties (Pearson on ranks)."""
    x = list(x)
    y = list(y)
    if len(x) != len(y):
        raise ReportingError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ReportingError("need at least two observations")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise ReportingError("correlation undefined for a constant vector")
    rank_x = _average_ranks(x)
    rank_y = _average_ranks(y)
    dx = rank_x - rank_x.mean()
    dy = rank_y - rank_y.mean()
    rho = float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return CorrelationReport(rho=rho, n=len(x))


def fleiss_kappa(votes) -> float:
    """Chance-corrected multi-rater agreement over an items x categories
    count matrix; every row must sum to the same rater count."""
    table = np.asarray(votes, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 1:
        raise ReportingError("votes must be a 2-D items x categories matrix")
    row_sums = table.sum(axis=1)
    n_raters = row_sums[0]
    if not np.all(row_sums == n_raters):
        raise ReportingError("every item must carry the same number of ratings")
    if n_raters < 2:
        raise ReportingError("need at least two raters")
    n_items = table.shape[0]
    p_observed = ((table * table).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = float(p_observed.mean())
    category_share = table.sum(axis=0) / (n_items * n_raters)
    p_expected = float((category_share * category_share).sum())
    if p_expected == 1.0:
        raise ReportingError("kappa undefined: all ratings in a single category")
    return (p_bar - p_expected) / (1.0 - p_expected)


MARKDOWN_HEADER = "| Group | Code-based | Visual-based | Total |"


def render_report(report: AggregateReport, format: str) -> str:
    """Serialize an aggregate report as json, csv (per-entry) or markdown."""
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["entry_id", "s_exec", "s_file", "s_clip", "s_motion", "total"])
        for entry_id, card in report.per_entry.items():
            writer.writerow(
                [entry_id, card.s_exec, card.s_file, card.s_clip, card.s_motion, card.total]
            )
        return buffer.getvalue()
    if format == "markdown":
        lines = [MARKDOWN_HEADER, "|---|---|---|---|"]
        lines.append(
            f"| overall ({report.n_entries} entries) | {report.code_based:.1f} "
            f"| {report.visual_based:.1f} | {report.overall:.1f} |"
        )
        for name, value in report.difficulty_breakdown.items():
            lines.append(f"| difficulty: {name} | | | {value:.1f} |")
        for name, value in report.domain_breakdown.items():
            lines.append(f"| domain: {name} | | | {value:.1f} |")
        if report.error_histogram:
            lines.append("")
            lines.append("| Error class | Frequency | Correction success rate |")
            lines.append("|---|---|---|")
            for name, stats in report.error_histogram.items():
                lines.append(
                    f"| {name} | {stats.frequency:.0%} | {stats.correction_success_rate:.0%} |"
                )
        return "\n".join(lines) + "\n"
    raise ReportingError(f"unknown report format {format!r}")

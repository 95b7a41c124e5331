"""Ranking metrics, significance testing, and TREC-style file formats.

Metrics depend only on the rank order of a run, never on score magnitudes.
Unjudged documents count as non-relevant; the per-query relevant total R
comes from the judgments, including relevant documents the run missed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .errors import FormatError
from .temporal import DEFAULT_PERIOD, TimeHistogram, emd_1d, histogram

logger = logging.getLogger(__name__)


@dataclass
class Qrels:
    """Graded relevance judgments: query_id -> doc_id -> grade."""

    grades: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        self.grades.setdefault(query_id, {})[doc_id] = grade

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.grades.get(query_id, {}).get(doc_id, 0)

    def relevant_docs(self, query_id: str) -> set[str]:
        return {
            d for d, g in self.grades.get(query_id, {}).items() if g >= 1
        }

    def relevant_count(self, query_id: str) -> int:
        return len(self.relevant_docs(query_id))

    def query_ids(self) -> list[str]:
        return sorted(self.grades)


@dataclass(frozen=True)
class RunEntry:
    """One run line; score_text preserves the exact parsed score string."""

    doc_id: str
    rank: int
    score: float
    score_text: str | None = None


@dataclass(frozen=True)
class Topic:
    query_id: str
    text: str
    query_time: int


Run = dict[str, list[RunEntry]]


def average_precision(entries: Sequence[RunEntry], qrels: Qrels, query_id: str) -> float:
    """AP = (1/R) * sum of precision at each relevant rank."""
    relevant = qrels.relevant_docs(query_id)
    if not relevant:
        raise ValueError(f"query {query_id} has no relevant documents")
    hits = 0
    precision_sum = 0.0
    for position, entry in enumerate(entries, start=1):
        if entry.doc_id in relevant:
            hits += 1
            precision_sum += hits / position
    return precision_sum / len(relevant)


def precision_at_k(
    entries: Sequence[RunEntry], qrels: Qrels, query_id: str, k: int = 30
) -> float:
    """Fraction of the top k that is relevant; short runs pad as misses."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    relevant = qrels.relevant_docs(query_id)
    hits = sum(1 for e in entries[:k] if e.doc_id in relevant)
    return hits / k


def r_precision(entries: Sequence[RunEntry], qrels: Qrels, query_id: str) -> float:
    """Precision at rank R where R is the judged-relevant count."""
    relevant = qrels.relevant_docs(query_id)
    if not relevant:
        raise ValueError(f"query {query_id} has no relevant documents")
    cutoff = len(relevant)
    hits = sum(1 for e in entries[:cutoff] if e.doc_id in relevant)
    return hits / cutoff


def mean_average_precision(run: Run, qrels: Qrels) -> float:
    """Mean AP over judged queries; queries with R = 0 are skipped."""
    values = []
    for query_id in sorted(run):
        if qrels.relevant_count(query_id) == 0:
            logger.warning(
                "query %s has no relevant documents; excluded from MAP",
                query_id,
            )
            continue
        values.append(average_precision(run[query_id], qrels, query_id))
    if not values:
        raise ValueError("no judged queries in the run")
    return float(np.mean(values))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    degenerate: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test over per-query metric pairs.

    With zero variance of the differences, equal means give p = 1 and
    unequal means are flagged degenerate instead of dividing by zero.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if a_arr.shape != b_arr.shape:
        raise ValueError("paired samples must have the same length")
    n = a_arr.size
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    diff = a_arr - b_arr
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, degenerate=False)
        return TTestResult(
            t=math.copysign(math.inf, mean), p=0.0, degenerate=True
        )
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(scipy_stats.t.sf(abs(t), n - 1))
    return TTestResult(t=t, p=min(p, 1.0), degenerate=False)


@dataclass(frozen=True)
class TemporalProfile:
    """Ground-truth vs retrieved-in-top-R relevant timestamp histograms."""

    truth: TimeHistogram
    retrieved: TimeHistogram | None
    emd: float | None


def temporal_r_precision_profile(
    entries: Sequence[RunEntry],
    qrels: Qrels,
    query_id: str,
    timestamps: Mapping[str, int],
    *,
    period: float = DEFAULT_PERIOD,
) -> TemporalProfile:
    """Compare when the relevant documents happened vs when we found them.

    Bins share the origin of the earliest relevant document. When the top R
    contains no relevant document the retrieved histogram and the distance
    are undefined and reported as None.
    """
    relevant = qrels.relevant_docs(query_id)
    if not relevant:
        raise ValueError(f"query {query_id} has no relevant documents")
    truth_times = [timestamps[d] for d in sorted(relevant)]
    origin = float(min(truth_times))
    truth = histogram(truth_times, period=period, origin=origin)
    cutoff = len(relevant)
    retrieved_times = [
        timestamps[e.doc_id]
        for e in entries[:cutoff]
        if e.doc_id in relevant
    ]
    if not retrieved_times:
        return TemporalProfile(truth=truth, retrieved=None, emd=None)
    retrieved = histogram(retrieved_times, period=period, origin=origin)
    return TemporalProfile(
        truth=truth, retrieved=retrieved, emd=emd_1d(truth, retrieved)
    )


def read_topics(path: str | Path) -> list[Topic]:
    """Read query_id<TAB>text<TAB>query_time lines."""
    topics = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(str(path), line_no, "expected 3 tab-separated fields")
            try:
                query_time = int(parts[2])
            except ValueError:
                raise FormatError(str(path), line_no, f"bad query_time {parts[2]!r}")
            topics.append(Topic(query_id=parts[0], text=parts[1], query_time=query_time))
    return topics


def write_topics(path: str | Path, topics: Iterable[Topic]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for topic in topics:
            handle.write(f"{topic.query_id}\t{topic.text}\t{topic.query_time}\n")


def read_qrels(path: str | Path) -> Qrels:
    """Read query_id 0 doc_id grade lines (whitespace separated)."""
    qrels = Qrels()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(str(path), line_no, "expected 4 fields")
            try:
                grade = int(parts[3])
            except ValueError:
                raise FormatError(str(path), line_no, f"bad grade {parts[3]!r}")
            qrels.add(parts[0], parts[2], grade)
    return qrels


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for query_id in sorted(qrels.grades):
            for doc_id in sorted(qrels.grades[query_id]):
                grade = qrels.grades[query_id][doc_id]
                handle.write(f"{query_id} 0 {doc_id} {grade}\n")


def read_run(path: str | Path) -> tuple[Run, str]:
    """Read a TREC run file; returns the run and its tag."""
    run: Run = {}
    tag = ""
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(str(path), line_no, "expected 6 fields")
            query_id, _, doc_id, rank_text, score_text, tag = parts
            try:
                rank = int(rank_text)
                score = float(score_text)
            except ValueError:
                raise FormatError(
                    str(path), line_no, f"bad rank or score: {line.strip()!r}"
                )
            run.setdefault(query_id, []).append(
                RunEntry(doc_id=doc_id, rank=rank, score=score, score_text=score_text)
            )
    return run, tag


def format_score(entry: RunEntry) -> str:
    """Six-decimal score text, or the parsed text verbatim on round trips."""
    if entry.score_text is not None:
        return entry.score_text
    return f"{entry.score:.6f}"


def write_run(path: str | Path, run: Run, tag: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for query_id in sorted(run):
            for entry in run[query_id]:
                handle.write(
                    f"{query_id} Q0 {entry.doc_id} {entry.rank} "
                    f"{format_score(entry)} {tag}\n"
                )


@dataclass(frozen=True)
class MetricsRow:
    query_id: str
    ap: float
    p30: float
    r_prec: float
    emd: float | None


def evaluate_run(
    run: Run,
    qrels: Qrels,
    timestamps: Mapping[str, int] | None = None,
    *,
    period: float = DEFAULT_PERIOD,
) -> list[MetricsRow]:
    """Per-query metric rows; EMD only when timestamps are available."""
    rows = []
    for query_id in sorted(run):
        if qrels.relevant_count(query_id) == 0:
            logger.warning("query %s unjudged; skipped", query_id)
            continue
        entries = run[query_id]
        emd = None
        if timestamps is not None:
            profile = temporal_r_precision_profile(
                entries, qrels, query_id, timestamps, period=period
            )
            emd = profile.emd
        rows.append(
            MetricsRow(
                query_id=query_id,
                ap=average_precision(entries, qrels, query_id),
                p30=precision_at_k(entries, qrels, query_id, 30),
                r_prec=r_precision(entries, qrels, query_id),
                emd=emd,
            )
        )
    return rows


def aggregate_row(rows: Sequence[MetricsRow]) -> MetricsRow:
    """Mean metrics over queries; EMD averages the defined values only."""
    if not rows:
        raise ValueError("no metric rows to aggregate")
    emds = [r.emd for r in rows if r.emd is not None]
    return MetricsRow(
        query_id="all",
        ap=float(np.mean([r.ap for r in rows])),
        p30=float(np.mean([r.p30 for r in rows])),
        r_prec=float(np.mean([r.r_prec for r in rows])),
        emd=float(np.mean(emds)) if emds else None,
    )


def write_metrics_report(path: str | Path, rows: Sequence[MetricsRow]) -> None:
    """CSV report with one row per query plus the aggregate row."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query_id", "AP", "P30", "Rprec", "EMD"])
        for row in list(rows) + [aggregate_row(rows)]:
            writer.writerow(
                [
                    row.query_id,
                    f"{row.ap:.6f}",
                    f"{row.p30:.6f}",
                    f"{row.r_prec:.6f}",
                    "" if row.emd is None else f"{row.emd:.6f}",
                ]
            )

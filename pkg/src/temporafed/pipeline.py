"""End-to-end experiment orchestration shared by the CLI and tests.

A method name selects one retrieval configuration: plain baselines, the
corpus and external temporal feedback re-rankers, the expansion models, and
the trained log-linear combination. Per-query work is pure, so queries can
run on a small thread pool capped by TEMPORAFED_THREADS without changing
any output.
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import feedback as fb
from . import ltr as ltr_mod
from . import verticals as vert
from .corpus import tokenize
from .errors import EmptySelectionError, EmptyFeedbackError, FormatError, TemporafedError
from .evaluation import Qrels, Run, RunEntry, Topic
from .retrieval import (
    DEFAULT_RECENCY_RATE,
    Index,
    ScoredDoc,
    ScoredList,
    search,
)
from .temporal import DENSITY_FLOOR, DEFAULT_PERIOD

logger = logging.getLogger(__name__)

METHODS = (
    "lmdir",
    "recency",
    "kde-score",
    "kde-rank",
    "ltr",
    "rm-e",
    "rmt-e",
    "kde-e",
    "full",
)

THREADS_ENV = "TEMPORAFED_THREADS"


@dataclass
class ExperimentConfig:
    """Tunable knobs for every pipeline stage, with sensible defaults."""

    method: str = "lmdir"
    mu: float = 2500.0
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    recency_rate: float = DEFAULT_RECENCY_RATE
    k: int = 200
    v_sel: int = 3
    k_merge: int = 50
    n_fb: int = 50
    n_terms: int = 20
    lam: float = 0.5
    kde_scheme: str = "rank"
    period: float = DEFAULT_PERIOD
    depth: int = 1000
    seed: int = 42
    tag: str = "temporafed"
    ltr_restarts: int = 3
    ltr_max_cycles: int = 25
    ltr_tolerance: float = 1e-5


# Maps config-file keys to ExperimentConfig attributes.
CONFIG_KEYS = {
    "method": "method",
    "mu": "mu",
    "bm25.k1": "bm25_k1",
    "bm25.b": "bm25_b",
    "recency.rate": "recency_rate",
    "K": "k",
    "v_sel": "v_sel",
    "k_merge": "k_merge",
    "n_fb": "n_fb",
    "n_terms": "n_terms",
    "lambda": "lam",
    "kde.scheme": "kde_scheme",
    "period": "period",
    "depth": "depth",
    "seed": "seed",
    "tag": "tag",
    "ltr.restarts": "ltr_restarts",
    "ltr.max_cycles": "ltr_max_cycles",
    "ltr.tolerance": "ltr_tolerance",
}


def parse_config_file(path: str | Path) -> ExperimentConfig:
    """Parse a flat `key = value` file with # comments."""
    config = ExperimentConfig()
    types = {f.name: type(getattr(config, f.name)) for f in fields(config)}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(str(path), line_no, "expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            attr = CONFIG_KEYS.get(key)
            if attr is None:
                raise FormatError(str(path), line_no, f"unknown key {key!r}")
            caster = types[attr]
            try:
                setattr(config, attr, caster(value))
            except ValueError:
                raise FormatError(
                    str(path), line_no, f"bad value {value!r} for {key}"
                )
    return config


def thread_count() -> int:
    """Worker count for per-query stages, capped by TEMPORAFED_THREADS."""
    cap = os.environ.get(THREADS_ENV)
    available = os.cpu_count() or 1
    if cap is not None:
        try:
            return max(1, min(int(cap), available))
        except ValueError:
            logger.warning("ignoring bad %s=%r", THREADS_ENV, cap)
    return min(4, available)


def map_queries(func: Callable, items: Sequence):
    """Apply func over items, preserving order, optionally threaded."""
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w",
        encoding="utf-8",
        dir=path.parent,
        prefix=f".{path.name}.",
        delete=False,
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, path)
    except BaseException:
        os.unlink(handle.name)
        raise


def scored_to_entries(scored: ScoredList) -> list[RunEntry]:
    return [
        RunEntry(doc_id=e.doc_id, rank=e.rank, score=e.score)
        for e in scored.entries
    ]


def _rescore_with_log_density(
    base: ScoredList, log_density_of: Callable[[np.ndarray], np.ndarray], index: Index
) -> ScoredList:
    """Add a log temporal density to query log-likelihood scores and reorder."""
    internal = [index.internal(e.doc_id) for e in base.entries]
    times = index.timestamps[internal].astype(float)
    log_dens = log_density_of(times)
    pairs = [
        (e.doc_id, e.score + float(ld))
        for e, ld in zip(base.entries, log_dens)
    ]
    return ScoredList.from_scores(base.query_id, pairs)


def build_selection(
    verticals: Sequence[vert.Vertical],
    query_terms: Sequence[str],
    topic: Topic,
    cfg: ExperimentConfig,
    *,
    with_densities: bool = True,
) -> vert.VerticalSelection:
    selection = vert.select_verticals(
        verticals,
        query_terms,
        v_sel=cfg.v_sel,
        k_merge=cfg.k_merge,
        mu=cfg.mu,
        query_time=topic.query_time,
        query_id=topic.query_id,
    )
    if not with_densities:
        return selection
    by_id = {v.vertical_id: v for v in verticals}
    return vert.attach_densities(
        selection,
        by_id,
        query_terms,
        n_fb=cfg.n_fb,
        scheme=cfg.kde_scheme,
        mu=cfg.mu,
        query_time=topic.query_time,
    )


def _expansion_model(
    method: str,
    selection: vert.VerticalSelection,
    verticals_by_id: Mapping[int, vert.Vertical],
    query_terms: Sequence[str],
    topic: Topic,
    cfg: ExperimentConfig,
) -> fb.RelevanceModel:
    if method in ("rmt-e", "full"):
        return fb.time_based_relevance_model(
            selection,
            verticals_by_id,
            query_terms,
            n_fb=cfg.n_fb,
            n_terms=cfg.n_terms,
            mu=cfg.mu,
            query_time=topic.query_time,
        )
    return fb.relevance_model_external(
        selection,
        verticals_by_id,
        query_terms,
        n_fb=cfg.n_fb,
        n_terms=cfg.n_terms,
        mu=cfg.mu,
        query_time=topic.query_time,
    )


@dataclass
class PreparedQuery:
    """Candidates plus features for the trained methods."""

    query_id: str
    doc_ids: list[str]
    features: np.ndarray


def prepare_ltr_query(
    method: str,
    index: Index,
    verticals: Sequence[vert.Vertical] | None,
    topic: Topic,
    cfg: ExperimentConfig,
) -> PreparedQuery:
    """Retrieve candidates and extract their feature matrix.

    Method "ltr" ranks LM.Dir candidates with lexical and metadata features
    only. Method "full" expands the query with the time-based external
    relevance model, retrieves with the expanded query, and adds both
    temporal density features.
    """
    query_terms = tokenize(topic.text)
    if method == "ltr":
        base = search(
            index,
            query_terms,
            k=cfg.depth,
            query_time=topic.query_time,
            scorer="lmdir",
            query_id=topic.query_id,
            mu=cfg.mu,
        )
        query_model = query_terms
        corpus_density = None
        selection = None
    elif method == "full":
        if verticals is None:
            raise ValueError("method full requires an external collection")
        selection = build_selection(verticals, query_terms, topic, cfg)
        by_id = {v.vertical_id: v for v in verticals}
        model = _expansion_model(
            "full", selection, by_id, query_terms, topic, cfg
        )
        expanded = fb.interpolate_query(
            fb.query_language_model(query_terms), model, cfg.lam
        )
        base = search(
            index,
            expanded.final,
            k=cfg.depth,
            query_time=topic.query_time,
            scorer="lmdir",
            query_id=topic.query_id,
            mu=cfg.mu,
        )
        query_model = expanded.final
        corpus_density = fb.corpus_temporal_feedback(
            index,
            expanded.final,
            n_fb=cfg.n_fb,
            scheme=cfg.kde_scheme,
            query_time=topic.query_time,
            mu=cfg.mu,
        )
    else:
        raise ValueError(f"method {method!r} does not use a trained model")
    doc_ids = base.doc_ids()
    internal = [index.internal(d) for d in doc_ids]
    features = ltr_mod.feature_matrix(
        index,
        internal,
        query_model,
        corpus_density=corpus_density,
        selection=selection,
        mu=cfg.mu,
        k1=cfg.bm25_k1,
        b=cfg.bm25_b,
    )
    return PreparedQuery(
        query_id=topic.query_id, doc_ids=doc_ids, features=features
    )


def run_query(
    method: str,
    index: Index,
    verticals: Sequence[vert.Vertical] | None,
    topic: Topic,
    cfg: ExperimentConfig,
    model: ltr_mod.LTRModel | None = None,
    prepared: PreparedQuery | None = None,
) -> ScoredList:
    """Produce the ranked list for one topic under the given method."""
    query_terms = tokenize(topic.text)
    if method in ("ltr", "full"):
        if model is None:
            raise ValueError(f"method {method!r} requires a trained model")
        if prepared is None:
            prepared = prepare_ltr_query(method, index, verticals, topic, cfg)
        ranked = ltr_mod.rerank(
            model, topic.query_id, prepared.doc_ids, prepared.features
        )
        entries = ranked.entries[: cfg.depth]
        return ScoredList(query_id=topic.query_id, entries=entries)
    if method in ("lmdir", "recency"):
        return search(
            index,
            query_terms,
            k=cfg.depth,
            query_time=topic.query_time,
            scorer="lmdir" if method == "lmdir" else "recency",
            query_id=topic.query_id,
            mu=cfg.mu,
            rate=cfg.recency_rate,
        )
    base = search(
        index,
        query_terms,
        k=cfg.depth,
        query_time=topic.query_time,
        scorer="lmdir",
        query_id=topic.query_id,
        mu=cfg.mu,
    )
    if method in ("kde-score", "kde-rank"):
        if not base.entries:
            return base
        scheme = "score" if method == "kde-score" else "rank"
        density = fb.corpus_temporal_feedback(
            index,
            query_terms,
            n_fb=cfg.n_fb,
            scheme=scheme,
            query_time=topic.query_time,
            mu=cfg.mu,
        )
        return _rescore_with_log_density(
            base,
            lambda t: np.log(np.maximum(density.evaluate(t), DENSITY_FLOOR)),
            index,
        )
    if method == "kde-e":
        if verticals is None:
            raise ValueError("method kde-e requires an external collection")
        if not base.entries:
            return base
        try:
            selection = build_selection(verticals, query_terms, topic, cfg)
        except (EmptySelectionError, EmptyFeedbackError):
            logger.warning(
                "query %s: external selection failed; keeping base ranking",
                topic.query_id,
            )
            return base
        return _rescore_with_log_density(
            base,
            lambda t: np.log(
                np.maximum(
                    vert.external_temporal_relevance(selection, t),
                    DENSITY_FLOOR,
                )
            ),
            index,
        )
    if method in ("rm-e", "rmt-e"):
        if verticals is None:
            raise ValueError(f"method {method!r} requires an external collection")
        try:
            selection = build_selection(
                verticals, query_terms, topic, cfg,
                with_densities=(method == "rmt-e"),
            )
            by_id = {v.vertical_id: v for v in verticals}
            rm = _expansion_model(
                method, selection, by_id, query_terms, topic, cfg
            )
        except (EmptySelectionError, EmptyFeedbackError):
            logger.warning(
                "query %s: expansion failed; keeping base ranking",
                topic.query_id,
            )
            return base
        expanded = fb.interpolate_query(
            fb.query_language_model(query_terms), rm, cfg.lam
        )
        return search(
            index,
            expanded.final,
            k=cfg.depth,
            query_time=topic.query_time,
            scorer="lmdir",
            query_id=topic.query_id,
            mu=cfg.mu,
        )
    raise ValueError(f"unknown method {method!r}")


def run_experiment(
    method: str,
    index: Index,
    verticals: Sequence[vert.Vertical] | None,
    topics: Sequence[Topic],
    cfg: ExperimentConfig,
    model: ltr_mod.LTRModel | None = None,
    prepared_map: Mapping[str, PreparedQuery] | None = None,
) -> Run:
    """Run every topic and return a run mapping query_id to entries."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")

    def one(topic: Topic) -> tuple[str, list[RunEntry]]:
        prepared = prepared_map.get(topic.query_id) if prepared_map else None
        scored = run_query(
            method, index, verticals, topic, cfg, model=model, prepared=prepared
        )
        return topic.query_id, scored_to_entries(scored)

    return dict(map_queries(one, list(topics)))


def prepare_all(
    method: str,
    index: Index,
    verticals: Sequence[vert.Vertical] | None,
    topics: Sequence[Topic],
    cfg: ExperimentConfig,
) -> dict[str, PreparedQuery]:
    """Candidate features for every topic of a trained method."""
    results = map_queries(
        lambda t: prepare_ltr_query(method, index, verticals, t, cfg),
        list(topics),
    )
    return {p.query_id: p for p in results}


def training_set(
    prepared_map: Mapping[str, PreparedQuery],
    qrels: Qrels,
) -> list[ltr_mod.QueryCandidates]:
    """Label prepared candidates with judgments for training."""
    out = []
    for query_id in sorted(prepared_map):
        prepared = prepared_map[query_id]
        labels = np.array(
            [qrels.grade(query_id, d) for d in prepared.doc_ids], dtype=int
        )
        out.append(
            ltr_mod.QueryCandidates(
                query_id=query_id,
                doc_ids=prepared.doc_ids,
                features=prepared.features,
                labels=labels,
                n_relevant=qrels.relevant_count(query_id),
            )
        )
    return out


def train_for_method(
    method: str,
    index: Index,
    verticals: Sequence[vert.Vertical] | None,
    topics: Sequence[Topic],
    qrels: Qrels,
    cfg: ExperimentConfig,
    prepared_map: Mapping[str, PreparedQuery] | None = None,
) -> tuple[ltr_mod.LTRModel, dict[str, PreparedQuery]]:
    """Train the log-linear model for "ltr" or "full" on labeled topics.

    The coordinate-ascent seed derives from the root seed, so the whole
    pipeline stays reproducible from one number.
    """
    if prepared_map is None:
        prepared_map = prepare_all(method, index, verticals, topics, cfg)
    training = training_set(prepared_map, qrels)
    ca_config = ltr_mod.CoordinateAscentConfig(
        restarts=cfg.ltr_restarts,
        max_cycles=cfg.ltr_max_cycles,
        tolerance=cfg.ltr_tolerance,
        seed=cfg.seed + 1,
    )
    model = ltr_mod.train_coordinate_ascent(training, ca_config)
    return model, dict(prepared_map)


def run_to_text(run: Run, tag: str) -> str:
    """Render a run in TREC format with six-decimal scores."""
    from .evaluation import format_score

    lines = []
    for query_id in sorted(run):
        for entry in run[query_id]:
            lines.append(
                f"{query_id} Q0 {entry.doc_id} {entry.rank} "
                f"{format_score(entry)} {tag}"
            )
    return "\n".join(lines) + "\n" if lines else ""

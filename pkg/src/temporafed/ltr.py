"""Log-linear ranking: feature extraction and coordinate-ascent training.

A document's score is Z + w . f(d) over a fixed 15-feature vector: three
retrieval-model features, two temporal density features, and ten metadata
features. Training runs cyclic coordinate ascent directly on MAP with a
fixed line-search grid, restarts, and deterministic tie handling.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import NoRelevantDocumentsError
from .retrieval import (
    DEFAULT_B,
    DEFAULT_K1,
    DEFAULT_MU,
    Index,
    ScoredDoc,
    ScoredList,
    score_bm25,
    score_idf,
    score_lm_dirichlet,
)
from .temporal import DENSITY_FLOOR, TemporalDensity
from .verticals import VerticalSelection, external_temporal_relevance

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "lmdir",
    "bm25_norm",
    "idf_norm",
    "corpus_density",
    "external_density",
    "log_doclen",
    "log_urls",
    "log_hashtags",
    "log_mentions",
    "has_url",
    "has_hashtags",
    "has_mentions",
    "is_reply",
    "log_statuses",
    "log_followers",
)
N_FEATURES = len(FEATURE_NAMES)
LOG_FLOOR = math.log(DENSITY_FLOOR)

MULTIPLICATIVE_STEPS = (0.5, 0.9, 1.1, 2.0)
ADDITIVE_PROBES = (0.05, -0.05, 0.5, -0.5)


def _minmax_log(values: np.ndarray) -> np.ndarray:
    """Min-max normalize into (0, 1] and take logs, flooring zeros.

    A constant column maps to 1.0 everywhere, so its log vanishes.
    """
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    normalized = (values - lo) / (hi - lo)
    return np.log(np.maximum(normalized, DENSITY_FLOOR))


def feature_matrix(
    index: Index,
    internal_ids: Sequence[int],
    query: Mapping[str, float] | Sequence[str],
    *,
    corpus_density: TemporalDensity | None = None,
    selection: VerticalSelection | None = None,
    mu: float = DEFAULT_MU,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> np.ndarray:
    """Feature vectors for one query's candidate documents.

    BM25 and IDF are min-max normalized within the candidate set before the
    log, so the candidate set is the extraction unit. Density features fall
    back to the log floor when no density is supplied; every entry of the
    result is finite.
    """
    n = len(internal_ids)
    features = np.zeros((n, N_FEATURES))
    bm25_raw = np.array(
        [score_bm25(index, query, i, k1=k1, b=b) for i in internal_ids]
    )
    idf_raw = np.array([score_idf(index, query, i) for i in internal_ids])
    features[:, 0] = [score_lm_dirichlet(index, query, i, mu=mu) for i in internal_ids]
    if n:
        features[:, 1] = _minmax_log(bm25_raw)
        features[:, 2] = _minmax_log(idf_raw)
    timestamps = index.timestamps[np.asarray(internal_ids, dtype=int)] if n else []
    if corpus_density is not None:
        density = corpus_density.evaluate(np.asarray(timestamps, dtype=float))
        features[:, 3] = np.log(np.maximum(density, DENSITY_FLOOR))
    else:
        features[:, 3] = LOG_FLOOR
    if selection is not None:
        mixture = external_temporal_relevance(
            selection, np.asarray(timestamps, dtype=float)
        )
        features[:, 4] = np.log(np.maximum(mixture, DENSITY_FLOOR))
    else:
        features[:, 4] = LOG_FLOOR
    for row, internal in enumerate(internal_ids):
        meta = index.docs[internal].metadata
        features[row, 5] = math.log1p(meta.doc_length)
        features[row, 6] = math.log1p(meta.url_count)
        features[row, 7] = math.log1p(meta.hashtag_count)
        features[row, 8] = math.log1p(meta.mention_count)
        features[row, 9] = 1.0 if meta.url_count else 0.0
        features[row, 10] = 1.0 if meta.hashtag_count else 0.0
        features[row, 11] = 1.0 if meta.mention_count else 0.0
        features[row, 12] = 1.0 if meta.is_reply else 0.0
        features[row, 13] = math.log1p(meta.statuses_count)
        features[row, 14] = math.log1p(meta.followers_count)
    return features


@dataclass
class LTRModel:
    """Weights of the log-linear ranker plus its training trace."""

    weights: np.ndarray
    intercept: float = 0.0
    feature_names: tuple[str, ...] = FEATURE_NAMES
    map_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.feature_names),):
            raise ValueError(
                f"expected {len(self.feature_names)} weights, "
                f"got shape {self.weights.shape}"
            )


def score_loglinear(model: LTRModel, features: np.ndarray):
    """Z + w . f for a single vector or a matrix of candidates."""
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != model.weights.shape[0]:
        raise ValueError(
            f"feature arity {features.shape[-1]} does not match "
            f"model arity {model.weights.shape[0]}"
        )
    return model.intercept + features @ model.weights


@dataclass
class QueryCandidates:
    """Training candidates for one query.

    labels hold graded judgments; relevance is binary (grade >= 1) during
    optimization. n_relevant may exceed the labeled candidates when the
    judgments contain relevant documents the candidate list missed.
    """

    query_id: str
    doc_ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    n_relevant: int | None = None

    def relevant_total(self) -> int:
        if self.n_relevant is not None:
            return self.n_relevant
        return int((self.labels >= 1).sum())


@dataclass
class CoordinateAscentConfig:
    restarts: int = 3
    max_cycles: int = 25
    tolerance: float = 1e-5
    seed: int = 0


class _MapObjective:
    """Mean average precision of a weight vector over the training set."""

    def __init__(self, training: Sequence[QueryCandidates]):
        self.queries = []
        for qc in training:
            relevant_total = qc.relevant_total()
            if relevant_total == 0:
                logger.warning(
                    "query %s has no relevant documents; excluded from MAP",
                    qc.query_id,
                )
                continue
            order = np.argsort(np.array(qc.doc_ids, dtype=object))
            tie_rank = np.empty(len(qc.doc_ids), dtype=int)
            tie_rank[order] = np.arange(len(qc.doc_ids))
            binary = (qc.labels >= 1).astype(float)
            self.queries.append(
                (qc.features, binary, relevant_total, tie_rank)
            )
        if not self.queries:
            raise NoRelevantDocumentsError(
                "training set has no query with a relevant document"
            )

    def __call__(self, weights: np.ndarray) -> float:
        total = 0.0
        for features, binary, relevant_total, tie_rank in self.queries:
            scores = features @ weights
            order = np.lexsort((tie_rank, -scores))
            rel = binary[order]
            hits = np.cumsum(rel)
            positions = np.arange(1, rel.size + 1)
            precision_sum = float((hits[rel > 0] / positions[rel > 0]).sum())
            total += precision_sum / relevant_total
        return total / len(self.queries)


def _candidate_values(current: float) -> list[float]:
    values = [current * m for m in MULTIPLICATIVE_STEPS]
    values.append(-current)
    values.extend(ADDITIVE_PROBES)
    seen = []
    for v in values:
        if v != current and v not in seen:
            seen.append(v)
    return seen


def train_coordinate_ascent(
    training: Sequence[QueryCandidates],
    config: CoordinateAscentConfig | None = None,
) -> LTRModel:
    """Fit the log-linear weights by cyclic coordinate ascent on MAP.

    Each coordinate tries a fixed grid of multiplicative steps, a sign
    flip, and additive probes around zero; a move is taken only when MAP
    strictly improves, so the recorded trace is non-decreasing. The best of
    `restarts` seeded random initializations wins; with zero cycles the
    best initialization is returned unchanged.
    """
    if config is None:
        config = CoordinateAscentConfig()
    objective = _MapObjective(training)
    n_features = training[0].features.shape[1]
    rng = np.random.default_rng(config.seed)
    best_weights: np.ndarray | None = None
    best_map = -1.0
    best_trace: list[float] = []
    for _ in range(max(1, config.restarts)):
        weights = rng.uniform(-1.0, 1.0, size=n_features)
        current = objective(weights)
        trace = [current]
        for _ in range(config.max_cycles):
            cycle_start = current
            for feature_idx in range(n_features):
                incumbent = weights[feature_idx]
                chosen = incumbent
                chosen_map = current
                for value in _candidate_values(incumbent):
                    weights[feature_idx] = value
                    candidate_map = objective(weights)
                    if candidate_map > chosen_map:
                        chosen_map = candidate_map
                        chosen = value
                weights[feature_idx] = chosen
                if chosen_map > current:
                    current = chosen_map
                    trace.append(current)
            if current - cycle_start < config.tolerance:
                break
        if current > best_map:
            best_map = current
            best_weights = weights.copy()
            best_trace = trace
    return LTRModel(
        weights=best_weights,
        intercept=0.0,
        feature_names=FEATURE_NAMES[:n_features]
        if n_features <= N_FEATURES
        else tuple(f"f{i}" for i in range(n_features)),
        map_trace=best_trace,
    )


def rerank(
    model: LTRModel,
    query_id: str,
    doc_ids: Sequence[str],
    features: np.ndarray,
) -> ScoredList:
    """Order candidates by model score, ties by ascending doc_id."""
    scores = score_loglinear(model, features)
    return ScoredList.from_scores(
        query_id, list(zip(doc_ids, (float(s) for s in scores)))
    )


def config_hash(parts: Mapping[str, object]) -> str:
    """Stable short hash of the configuration that produced a model."""
    text = ";".join(f"{k}={parts[k]}" for k in sorted(parts))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_model(path: str | Path, model: LTRModel, config_digest: str = "") -> None:
    """Persist feature_name<TAB>weight rows under a config-hash header."""
    lines = [f"# temporafed model config_hash={config_digest}"]
    lines.append(f"__intercept__\t{float(model.intercept)!r}")
    for name, weight in zip(model.feature_names, model.weights):
        lines.append(f"{name}\t{float(weight)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> LTRModel:
    names: list[str] = []
    weights: list[float] = []
    intercept = 0.0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        name, _, value = line.partition("\t")
        if name == "__intercept__":
            intercept = float(value)
        else:
            names.append(name)
            weights.append(float(value))
    return LTRModel(
        weights=np.array(weights),
        intercept=intercept,
        feature_names=tuple(names),
    )


def write_training_log(path: str | Path, trace: Sequence[float]) -> None:
    """CSV of (iteration, MAP) pairs for the winning restart."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "MAP"])
        for iteration, value in enumerate(trace):
            writer.writerow([iteration, f"{value:.6f}"])

"""Inverted index and lexical retrieval over timestamped documents.

Scoring functions accept either a plain term sequence (term weights are the
query counts) or a weighted query model mapping term to weight. Rankings are
deterministic: ties in score break by ascending doc_id.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, Document

logger = logging.getLogger(__name__)

DEFAULT_MU = 2500.0
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

# Exponential recency prior rate: half-life of three days.
DEFAULT_RECENCY_RATE = math.log(2.0) / (3.0 * 86400.0)


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    rank: int
    score: float


@dataclass(frozen=True)
class ScoredList:
    """A ranked result list for one query.

    Entries are ordered by non-increasing score with ranks starting at 1;
    score ties are ordered by ascending doc_id.
    """

    query_id: str
    entries: tuple[ScoredDoc, ...]

    @classmethod
    def from_scores(cls, query_id: str, pairs: Sequence[tuple[str, float]]) -> "ScoredList":
        """Rank (doc_id, score) pairs, breaking score ties by doc_id."""
        ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
        entries = tuple(
            ScoredDoc(doc_id=d, rank=i + 1, score=s)
            for i, (d, s) in enumerate(ordered)
        )
        return cls(query_id=query_id, entries=entries)

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def validate(self) -> None:
        seen = set()
        for i, entry in enumerate(self.entries):
            if entry.rank != i + 1:
                raise ValueError(f"rank {entry.rank} at position {i}")
            if entry.doc_id in seen:
                raise ValueError(f"duplicate doc_id {entry.doc_id}")
            seen.add(entry.doc_id)
            if i and self.entries[i - 1].score < entry.score:
                raise ValueError("scores increase down the ranking")


class Index:
    """Immutable inverted index with collection statistics.

    Internal ids follow corpus ingestion order. Postings are stored as
    parallel numpy arrays per term for vectorized scoring; per-document
    term frequency dicts back the reference scorers.
    """

    def __init__(self, corpus: Corpus):
        self.docs: tuple[Document, ...] = corpus.documents
        self.doc_ids: list[str] = [d.doc_id for d in self.docs]
        self.id_to_internal: dict[str, int] = {
            d: i for i, d in enumerate(self.doc_ids)
        }
        self.term_freqs: list[dict[str, int]] = [
            dict(Counter(d.tokens)) for d in self.docs
        ]
        self.doc_lengths = np.array([len(d.tokens) for d in self.docs], dtype=np.int64)
        self.timestamps = np.array([d.timestamp for d in self.docs], dtype=np.int64)
        self.n_docs = len(self.docs)
        self.total_terms = int(self.doc_lengths.sum())
        cf: Counter = Counter()
        df: Counter = Counter()
        postings_lists: dict[str, list[tuple[int, int]]] = {}
        for internal, freqs in enumerate(self.term_freqs):
            for term, tf in freqs.items():
                cf[term] += tf
                df[term] += 1
                postings_lists.setdefault(term, []).append((internal, tf))
        self.cf: dict[str, int] = dict(cf)
        self.df: dict[str, int] = dict(df)
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for term, pairs in postings_lists.items():
            ids = np.array([p[0] for p in pairs], dtype=np.int64)
            tfs = np.array([p[1] for p in pairs], dtype=np.float64)
            self.postings[term] = (ids, tfs)
        self.avgdl = self.total_terms / self.n_docs if self.n_docs else 0.0
        # Diagnostic only: counts of query terms skipped for zero
        # collection frequency. Does not affect any score.
        self.skipped_terms: Counter = Counter()

    def internal(self, doc_id: str) -> int:
        return self.id_to_internal[doc_id]

    def document(self, doc_id: str) -> Document:
        return self.docs[self.id_to_internal[doc_id]]

    def tf(self, term: str, internal: int) -> int:
        return self.term_freqs[internal].get(term, 0)


def build_index(corpus: Corpus) -> Index:
    return Index(corpus)


def as_weights(query: Mapping[str, float] | Sequence[str]) -> dict[str, float]:
    """Normalize a query to a term->weight mapping (counts for sequences)."""
    if isinstance(query, Mapping):
        return {t: float(w) for t, w in query.items() if w > 0}
    return {t: float(c) for t, c in Counter(query).items()}


def score_lm_dirichlet(
    index: Index,
    query: Mapping[str, float] | Sequence[str],
    internal: int,
    mu: float = DEFAULT_MU,
) -> float:
    """Dirichlet-smoothed query log-likelihood of one document.

    score = sum_w c(w, q) * log((tf + mu * cf_w / |C|) / (|d| + mu)).

    Query terms absent from the whole collection are skipped; they are
    recorded in the index diagnostics but contribute nothing.
    """
    weights = as_weights(query)
    doc_len = int(index.doc_lengths[internal])
    freqs = index.term_freqs[internal]
    score = 0.0
    for term, weight in weights.items():
        cf = index.cf.get(term, 0)
        if cf == 0:
            index.skipped_terms[term] += 1
            continue
        p_collection = cf / index.total_terms
        score += weight * math.log(
            (freqs.get(term, 0) + mu * p_collection) / (doc_len + mu)
        )
    return score


def idf_rsj(index: Index, term: str) -> float:
    """Robertson-Sparck Jones idf with the +1 stabilizer inside the log."""
    df = index.df.get(term, 0)
    return math.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def score_bm25(
    index: Index,
    query: Mapping[str, float] | Sequence[str],
    internal: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Okapi BM25 score of one document."""
    weights = as_weights(query)
    doc_len = int(index.doc_lengths[internal])
    freqs = index.term_freqs[internal]
    score = 0.0
    for term, weight in weights.items():
        tf = freqs.get(term, 0)
        if tf == 0:
            continue
        denom = tf + k1 * (1.0 - b + b * doc_len / index.avgdl)
        score += weight * idf_rsj(index, term) * tf * (k1 + 1.0) / denom
    return score


def score_idf(
    index: Index,
    query: Mapping[str, float] | Sequence[str],
    internal: int,
) -> float:
    """Sum of log(N / df) over query terms present in the document."""
    weights = as_weights(query)
    freqs = index.term_freqs[internal]
    score = 0.0
    for term, weight in weights.items():
        df = index.df.get(term, 0)
        if df == 0 or freqs.get(term, 0) == 0:
            continue
        score += weight * math.log(index.n_docs / df)
    return score


def recency_prior(
    query_time: float,
    doc_time: float,
    rate: float = DEFAULT_RECENCY_RATE,
) -> float:
    """Exponential-decay prior exp(-rate * age) in (0, 1]."""
    if doc_time > query_time:
        raise ValueError(
            f"document time {doc_time} is later than query time {query_time}"
        )
    return math.exp(-rate * (query_time - doc_time))


def _candidate_mask(index: Index, weights: Mapping[str, float]) -> np.ndarray:
    mask = np.zeros(index.n_docs, dtype=bool)
    for term in weights:
        posting = index.postings.get(term)
        if posting is not None:
            mask[posting[0]] = True
    return mask


def _scores_lmdir(index: Index, weights: Mapping[str, float], mu: float) -> np.ndarray:
    """Vectorized Dirichlet LM scores for all documents.

    Every document scores as base - W*log(|d| + mu) where base collects the
    doc-independent log(mu * p_w) terms, plus a per-posting correction for
    documents actually containing a query term. Matches score_lm_dirichlet.
    """
    base = 0.0
    total_weight = 0.0
    corrections: list[tuple[np.ndarray, np.ndarray]] = []
    for term, weight in weights.items():
        cf = index.cf.get(term, 0)
        if cf == 0:
            index.skipped_terms[term] += 1
            continue
        prior = mu * cf / index.total_terms
        base += weight * math.log(prior)
        total_weight += weight
        ids, tfs = index.postings[term]
        corrections.append((ids, weight * (np.log(tfs + prior) - math.log(prior))))
    scores = base - total_weight * np.log(index.doc_lengths + mu)
    for ids, delta in corrections:
        scores[ids] += delta
    return scores


def _scores_bm25(
    index: Index, weights: Mapping[str, float], k1: float, b: float
) -> np.ndarray:
    scores = np.zeros(index.n_docs)
    norm = k1 * (1.0 - b + b * index.doc_lengths / index.avgdl)
    for term, weight in weights.items():
        posting = index.postings.get(term)
        if posting is None:
            continue
        ids, tfs = posting
        scores[ids] += weight * idf_rsj(index, term) * tfs * (k1 + 1.0) / (tfs + norm[ids])
    return scores


def _scores_idf(index: Index, weights: Mapping[str, float]) -> np.ndarray:
    scores = np.zeros(index.n_docs)
    for term, weight in weights.items():
        posting = index.postings.get(term)
        if posting is None:
            continue
        ids, _ = posting
        scores[ids] += weight * math.log(index.n_docs / index.df[term])
    return scores


def search(
    index: Index,
    query: Mapping[str, float] | Sequence[str],
    *,
    k: int,
    query_time: float,
    scorer: str = "lmdir",
    query_id: str = "",
    mu: float = DEFAULT_MU,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    rate: float = DEFAULT_RECENCY_RATE,
) -> ScoredList:
    """Rank the top-k documents published at or before query_time.

    Candidates are documents containing at least one query term known to
    the collection. Scorers: "lmdir", "bm25", "idf", and "recency" (query
    log-likelihood plus the log of the exponential recency prior).
    Returns an empty list when nothing matches.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    weights = as_weights(query)
    if not weights:
        return ScoredList(query_id=query_id, entries=())
    if scorer == "lmdir":
        scores = _scores_lmdir(index, weights, mu)
    elif scorer == "recency":
        scores = _scores_lmdir(index, weights, mu)
        scores = scores - rate * (query_time - index.timestamps)
    elif scorer == "bm25":
        scores = _scores_bm25(index, weights, k1, b)
    elif scorer == "idf":
        scores = _scores_idf(index, weights)
    else:
        raise ValueError(f"unknown scorer: {scorer!r}")
    mask = _candidate_mask(index, weights)
    mask &= index.timestamps <= query_time
    candidates = np.nonzero(mask)[0]
    if candidates.size == 0:
        return ScoredList(query_id=query_id, entries=())
    pairs = [(index.doc_ids[i], float(scores[i])) for i in candidates]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    entries = tuple(
        ScoredDoc(doc_id=d, rank=r + 1, score=s)
        for r, (d, s) in enumerate(pairs[:k])
    )
    return ScoredList(query_id=query_id, entries=entries)

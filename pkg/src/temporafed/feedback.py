"""Query expansion from external collections and corpus temporal feedback.

The expansion models all share one skeleton: retrieve a feedback set from
each selected vertical, turn retrieval scores into document posteriors
P(q|d) by a softmax within the set, and accumulate term mass

    P(w | F) ~ sum_c P(q|c) * (1/|R_c|) * sum_d P(w|d) * P(q|d),

optionally reweighted by temporal evidence. The final model keeps the top
terms, renormalizes, and interpolates with the original query model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyFeedbackError
from .retrieval import DEFAULT_MU, Index, ScoredList, search
from .temporal import (
    DENSITY_FLOOR,
    TemporalDensity,
    feedback_weights,
    histogram,
    kde_fit,
)
from .verticals import (
    DEFAULT_N_FB,
    Vertical,
    VerticalSelection,
    external_temporal_relevance,
)

logger = logging.getLogger(__name__)

DEFAULT_N_TERMS = 20
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class RelevanceModel:
    """A truncated, normalized expansion term distribution.

    provenance lists the (vertical_id, doc_id) pairs that contributed any
    mass. attribution, when tracked, maps each surviving term to the mass
    contributed per feedback document (pre-normalization proportions).
    """

    terms: dict[str, float]
    provenance: frozenset[tuple[int, str]] = frozenset()
    attribution: dict[str, dict[tuple[int, str], float]] | None = None


@dataclass(frozen=True)
class ExpandedQuery:
    """Interpolation of the original query model with a feedback model."""

    original: dict[str, float]
    feedback: RelevanceModel | None
    lam: float
    final: dict[str, float]


def query_language_model(tokens: Sequence[str]) -> dict[str, float]:
    """Maximum-likelihood unigram model of the query itself."""
    if not tokens:
        raise ValueError("cannot build a model from an empty query")
    weight = 1.0 / len(tokens)
    model: dict[str, float] = {}
    for token in tokens:
        model[token] = model.get(token, 0.0) + weight
    return model


def _doc_posteriors(scored: ScoredList) -> np.ndarray:
    """Softmax of retrieval log-scores within one feedback set."""
    scores = np.array([e.score for e in scored.entries], dtype=float)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def _feedback_sets(
    selection: VerticalSelection,
    verticals_by_id: Mapping[int, Vertical],
    query,
    n_fb: int,
    mu: float,
    query_time: float | None,
) -> list[tuple[int, float, ScoredList, np.ndarray]]:
    """Retrieve each selected vertical's feedback set and doc posteriors."""
    cutoff = math.inf if query_time is None else query_time
    sets = []
    for sel in selection.selected:
        vertical = verticals_by_id[sel.vertical_id]
        hits = search(
            vertical.index, query, k=n_fb, query_time=cutoff,
            scorer="lmdir", mu=mu,
        )
        if not hits.entries:
            continue
        sets.append((sel.vertical_id, sel.weight, hits, _doc_posteriors(hits)))
    if not sets:
        raise EmptyFeedbackError("no selected vertical produced feedback")
    return sets


def truncate_renormalize(weights: Mapping[str, float], n_terms: int) -> dict[str, float]:
    """Keep the n_terms heaviest terms (ties by term) and renormalize."""
    ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))[:n_terms]
    total = sum(w for _, w in ranked)
    if total <= 0:
        raise EmptyFeedbackError("expansion model has no positive mass")
    return {term: weight / total for term, weight in ranked}


def _accumulate(
    sets,
    verticals_by_id: Mapping[int, Vertical],
    doc_factor,
    n_terms: int,
    track_attribution: bool,
) -> RelevanceModel:
    """Shared accumulation loop over feedback sets.

    doc_factor(vertical_id, doc, posterior, weight) returns the scalar
    multiplier applied to that document's term distribution P(w|d).
    """
    mass: dict[str, float] = {}
    contributions: dict[str, dict[tuple[int, str], float]] = {}
    provenance: set[tuple[int, str]] = set()
    for vertical_id, weight, hits, posteriors in sets:
        index = verticals_by_id[vertical_id].index
        coef = weight / len(hits.entries)
        for entry, posterior in zip(hits.entries, posteriors):
            internal = index.internal(entry.doc_id)
            doc_len = int(index.doc_lengths[internal])
            if doc_len == 0:
                continue
            factor = coef * float(posterior) * doc_factor(
                vertical_id, index.docs[internal], posterior, weight
            )
            if factor <= 0.0:
                continue
            provenance.add((vertical_id, entry.doc_id))
            for term, tf in index.term_freqs[internal].items():
                contribution = factor * tf / doc_len
                mass[term] = mass.get(term, 0.0) + contribution
                if track_attribution:
                    per_doc = contributions.setdefault(term, {})
                    key = (vertical_id, entry.doc_id)
                    per_doc[key] = per_doc.get(key, 0.0) + contribution
    terms = truncate_renormalize(mass, n_terms)
    attribution = None
    if track_attribution:
        attribution = {term: contributions[term] for term in terms}
    return RelevanceModel(
        terms=terms,
        provenance=frozenset(provenance),
        attribution=attribution,
    )


def relevance_model_external(
    selection: VerticalSelection,
    verticals_by_id: Mapping[int, Vertical],
    query,
    *,
    n_fb: int = DEFAULT_N_FB,
    n_terms: int = DEFAULT_N_TERMS,
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
    track_attribution: bool = False,
) -> RelevanceModel:
    """Relevance model estimated from the selected external verticals."""
    sets = _feedback_sets(
        selection, verticals_by_id, query, n_fb, mu, query_time
    )
    return _accumulate(
        sets, verticals_by_id, lambda *_: 1.0, n_terms, track_attribution
    )


def time_based_relevance_model(
    selection: VerticalSelection,
    verticals_by_id: Mapping[int, Vertical],
    query,
    *,
    n_fb: int = DEFAULT_N_FB,
    n_terms: int = DEFAULT_N_TERMS,
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
    floor: float = DENSITY_FLOOR,
    track_attribution: bool = False,
) -> RelevanceModel:
    """Relevance model with each document reweighted by temporal relevance.

    The temporal factor is the external mixture density at the document's
    timestamp, floored so an off-peak document still contributes a sliver.
    Requires the selection to carry fitted densities.
    """
    sets = _feedback_sets(
        selection, verticals_by_id, query, n_fb, mu, query_time
    )

    def temporal_factor(vertical_id, doc, posterior, weight):
        return max(external_temporal_relevance(selection, doc.timestamp), floor)

    return _accumulate(
        sets, verticals_by_id, temporal_factor, n_terms, track_attribution
    )


def discrete_time_relevance_model(
    selection: VerticalSelection,
    verticals_by_id: Mapping[int, Vertical],
    query,
    *,
    period: float,
    n_fb: int = DEFAULT_N_FB,
    n_terms: int = DEFAULT_N_TERMS,
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
) -> RelevanceModel:
    """Expansion over discrete time periods instead of a continuous density.

    P(w|F) ~ sum_c P(q|c) sum_T P(w|T,q,c) P(T|q), with P(T|q) the
    histogram of all feedback timestamps and P(w|T,q,c) the P(q|d)-weighted
    term distribution of vertical c's feedback documents falling in T.
    """
    sets = _feedback_sets(
        selection, verticals_by_id, query, n_fb, mu, query_time
    )
    all_times = [
        verticals_by_id[vertical_id].index.document(entry.doc_id).timestamp
        for vertical_id, _, hits, _ in sets
        for entry in hits.entries
    ]
    origin = float(min(all_times))
    p_period = histogram(all_times, period=period, origin=origin)
    mass: dict[str, float] = {}
    provenance: set[tuple[int, str]] = set()
    for vertical_id, weight, hits, posteriors in sets:
        index = verticals_by_id[vertical_id].index
        by_bin: dict[int, list[tuple[int, float]]] = {}
        for entry, posterior in zip(hits.entries, posteriors):
            internal = index.internal(entry.doc_id)
            t = index.docs[internal].timestamp
            bin_idx = int((t - origin) // period)
            by_bin.setdefault(bin_idx, []).append((internal, float(posterior)))
        for bin_idx, members in by_bin.items():
            p_t = float(p_period.masses[bin_idx])
            denom = sum(p for _, p in members)
            if denom <= 0 or p_t <= 0:
                continue
            for internal, posterior in members:
                doc_len = int(index.doc_lengths[internal])
                if doc_len == 0:
                    continue
                factor = weight * p_t * (posterior / denom)
                provenance.add((vertical_id, index.doc_ids[internal]))
                for term, tf in index.term_freqs[internal].items():
                    mass[term] = mass.get(term, 0.0) + factor * tf / doc_len
    terms = truncate_renormalize(mass, n_terms)
    return RelevanceModel(terms=terms, provenance=frozenset(provenance))


def interpolate_query(
    original: Mapping[str, float],
    feedback: RelevanceModel | None,
    lam: float = DEFAULT_LAMBDA,
) -> ExpandedQuery:
    """Mix the original query model with the feedback model.

    final(w) = lam * original(w) + (1 - lam) * feedback(w) over the union
    vocabulary. lam = 1 reproduces the original query exactly.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    original = dict(original)
    if feedback is None:
        return ExpandedQuery(
            original=original, feedback=None, lam=lam, final=dict(original)
        )
    accumulated: dict[str, float] = {}
    for term, weight in original.items():
        accumulated[term] = accumulated.get(term, 0.0) + lam * weight
    for term, weight in feedback.terms.items():
        accumulated[term] = accumulated.get(term, 0.0) + (1.0 - lam) * weight
    final = {term: weight for term, weight in accumulated.items() if weight > 0.0}
    return ExpandedQuery(original=original, feedback=feedback, lam=lam, final=final)


def corpus_temporal_feedback(
    index: Index,
    query: Mapping[str, float] | Sequence[str],
    *,
    n_fb: int = DEFAULT_N_FB,
    scheme: str = "rank",
    query_time: float,
    mu: float = DEFAULT_MU,
    bandwidth: float | None = None,
) -> TemporalDensity:
    """Temporal density of the main corpus's own feedback documents.

    Retrieves the top n_fb documents published at or before query_time with
    the (possibly expanded) query and fits the weighted KDE over their
    timestamps.
    """
    hits = search(
        index, query, k=n_fb, query_time=query_time, scorer="lmdir", mu=mu
    )
    if not hits.entries:
        raise EmptyFeedbackError("query matched no documents for feedback")
    weights = feedback_weights(hits, scheme)
    timestamps = [index.document(e.doc_id).timestamp for e in hits.entries]
    return kde_fit(timestamps, weights, bandwidth=bandwidth)


def write_expansion_tsv(path: str | Path, model: Mapping[str, float]) -> None:
    """Write term<TAB>weight lines, heaviest first, ties by term."""
    ranked = sorted(model.items(), key=lambda kv: (-kv[1], kv[0]))
    with open(path, "w", encoding="utf-8") as handle:
        for term, weight in ranked:
            handle.write(f"{term}\t{weight:.6f}\n")

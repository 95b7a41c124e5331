"""Topic-based external collections: clustering, selection, temporal mixture.

An external corpus is partitioned into K topical verticals by mini-batch
k-means over L2-normalized TF-IDF document vectors. At query time a
two-stage selector keeps a handful of promising verticals and assigns each
a weight P(q|c) from its share of a merged result list; per-vertical
temporal densities combine into the external mixture

    p(t) = sum_c f_c(t) * P(q|c).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus
from .errors import DegenerateDensityError, EmptySelectionError
from .retrieval import DEFAULT_MU, Index, ScoredList, as_weights, build_index, search
from .temporal import TemporalDensity, feedback_weights, kde_fit

logger = logging.getLogger(__name__)

DEFAULT_K = 200
DEFAULT_V_SEL = 3
DEFAULT_K_MERGE = 50
DEFAULT_N_FB = 50


@dataclass(frozen=True)
class Vertical:
    """One topical shard of the external corpus with its own index."""

    vertical_id: int
    index: Index
    label_term: str = ""


@dataclass(frozen=True)
class SelectedVertical:
    vertical_id: int
    weight: float
    density: TemporalDensity | None = None


@dataclass(frozen=True)
class VerticalSelection:
    """Selected verticals for one query with normalized weights."""

    query_id: str
    selected: tuple[SelectedVertical, ...]

    def weights(self) -> dict[int, float]:
        return {s.vertical_id: s.weight for s in self.selected}


def tfidf_matrix(
    token_lists: Sequence[Sequence[str]],
) -> tuple[sparse.csr_matrix, list[str]]:
    """L2-normalized TF-IDF matrix with log tf and log(N/df) idf weighting."""
    vocab: dict[str, int] = {}
    indptr = [0]
    indices: list[int] = []
    tf_data: list[float] = []
    df_counts: dict[int, int] = {}
    for tokens in token_lists:
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            col = vocab.setdefault(term, len(vocab))
            indices.append(col)
            tf_data.append(1.0 + math.log(tf))
            df_counts[col] = df_counts.get(col, 0) + 1
        indptr.append(len(indices))
    n_docs = len(token_lists)
    n_terms = len(vocab)
    matrix = sparse.csr_matrix(
        (tf_data, indices, indptr), shape=(n_docs, n_terms)
    )
    idf = np.zeros(n_terms)
    for col, df in df_counts.items():
        idf[col] = math.log(n_docs / df) if df < n_docs else 0.0
    # Terms present in every document carry no contrast; give them a tiny
    # positive weight so single-term documents keep a nonzero vector.
    idf[idf == 0.0] = 1e-9
    matrix = matrix.multiply(sparse.csr_matrix(np.atleast_2d(idf)))
    matrix = matrix.tocsr()
    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
    norms[norms == 0.0] = 1.0
    matrix = sparse.diags(1.0 / norms) @ matrix
    terms = [t for t, _ in sorted(vocab.items(), key=lambda kv: kv[1])]
    return matrix.tocsr(), terms


def _squared_distances(block: sparse.csr_matrix, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from each row to each center."""
    dots = block @ centers.T
    row_sq = np.asarray(block.multiply(block).sum(axis=1)).ravel()
    center_sq = (centers * centers).sum(axis=1)
    return np.maximum(row_sq[:, None] - 2.0 * dots + center_sq[None, :], 0.0)


def _plus_plus_init(
    matrix: sparse.csr_matrix, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: spread initial centers proportional to distance."""
    n = matrix.shape[0]
    centers = np.zeros((k, matrix.shape[1]))
    first = int(rng.integers(n))
    centers[0] = matrix[first].toarray().ravel()
    closest = _squared_distances(matrix, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=closest / total))
        centers[j] = matrix[choice].toarray().ravel()
        dist_new = _squared_distances(matrix, centers[j : j + 1]).ravel()
        closest = np.minimum(closest, dist_new)
    return centers


def _fix_empty_clusters(
    matrix: sparse.csr_matrix, centers: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Re-seed each empty cluster from the point farthest from its center."""
    k = centers.shape[0]
    for _ in range(k):
        counts = np.bincount(labels, minlength=k)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            break
        distances = _squared_distances(matrix, centers)
        assigned = distances[np.arange(matrix.shape[0]), labels]
        for cluster in empty:
            farthest = int(np.argmax(assigned))
            centers[cluster] = matrix[farthest].toarray().ravel()
            assigned[farthest] = 0.0
        distances = _squared_distances(matrix, centers)
        labels = np.argmin(distances, axis=1)
    return labels


def cluster_verticals(
    token_lists: Sequence[Sequence[str]],
    k: int,
    seed: int,
    *,
    batch_size: int = 256,
    n_iters: int = 100,
) -> np.ndarray:
    """Assign each document to one of k topical clusters.

    Mini-batch k-means over the TF-IDF matrix, deterministic under a fixed
    seed. Empty clusters after the final assignment are re-seeded from the
    farthest point, so every cluster label in 0..k-1 is used.
    """
    n = len(token_lists)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    matrix, _ = tfidf_matrix(token_lists)
    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(matrix, k, rng)
    counts = np.zeros(k, dtype=np.int64)
    for _ in range(n_iters):
        batch_idx = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = matrix[batch_idx]
        assign = np.argmin(_squared_distances(batch, centers), axis=1)
        for row, cluster in enumerate(assign):
            counts[cluster] += 1
            eta = 1.0 / counts[cluster]
            centers[cluster] += eta * (
                batch[row].toarray().ravel() - centers[cluster]
            )
    labels = np.argmin(_squared_distances(matrix, centers), axis=1)
    labels = _fix_empty_clusters(matrix, centers, labels)
    return labels.astype(int)


def _label_term(member_tokens: Sequence[Sequence[str]]) -> str:
    """Most frequent term across the member documents; diagnostic only."""
    counts: dict[str, int] = {}
    for tokens in member_tokens:
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
    if not counts:
        return ""
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def build_verticals(corpus: Corpus, k: int, seed: int) -> list[Vertical]:
    """Cluster an external corpus and index each vertical separately."""
    token_lists = [d.tokens for d in corpus.documents]
    labels = cluster_verticals(token_lists, k, seed)
    verticals = []
    for vertical_id in range(k):
        members = tuple(
            doc for doc, label in zip(corpus.documents, labels) if label == vertical_id
        )
        sub = Corpus(documents=members)
        verticals.append(
            Vertical(
                vertical_id=vertical_id,
                index=build_index(sub),
                label_term=_label_term([d.tokens for d in members]),
            )
        )
    return verticals


def _vertical_loglik(
    vertical: Vertical,
    weights: Mapping[str, float],
    global_cf: Mapping[str, int],
    global_total: int,
    mu: float,
) -> tuple[bool, float]:
    """Stage-1 query log-likelihood of a vertical's collection model.

    The vertical is treated as one long pseudo-document smoothed against the
    global external collection. Returns (has_overlap, score).
    """
    index = vertical.index
    size = index.total_terms
    score = 0.0
    overlap = False
    for term, weight in weights.items():
        gcf = global_cf.get(term, 0)
        if gcf == 0:
            continue
        cf = index.cf.get(term, 0)
        if cf > 0:
            overlap = True
        score += weight * math.log(
            (cf + mu * gcf / global_total) / (size + mu)
        )
    return overlap, score


def select_verticals(
    verticals: Sequence[Vertical],
    query: Mapping[str, float] | Sequence[str],
    *,
    v_sel: int = DEFAULT_V_SEL,
    k_merge: int = DEFAULT_K_MERGE,
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
    query_id: str = "",
) -> VerticalSelection:
    """Two-stage resource selection with sample-based weights.

    Stage 1 ranks verticals by vertical-level query likelihood and keeps the
    top v_sel, never preferring a vertical with zero query-term overlap over
    one with overlap. Stage 2 merges each survivor's top documents into one
    list of size k_merge and sets P(q|c) to the vertical's share of it.
    Weights sum to one; verticals placing no document are dropped.
    """
    if not verticals:
        raise EmptySelectionError("no verticals to select from")
    weights = as_weights(query)
    cutoff = math.inf if query_time is None else query_time
    global_cf: dict[str, int] = {}
    global_total = 0
    for vertical in verticals:
        for term, cf in vertical.index.cf.items():
            global_cf[term] = global_cf.get(term, 0) + cf
        global_total += vertical.index.total_terms
    if global_total == 0:
        raise EmptySelectionError("external collection is empty")
    stage1 = []
    for vertical in verticals:
        overlap, score = _vertical_loglik(
            vertical, weights, global_cf, global_total, mu
        )
        stage1.append((not overlap, -score, vertical.vertical_id, vertical))
    stage1.sort(key=lambda item: item[:3])
    kept = [item[3] for item in stage1[:v_sel]]
    merged: list[tuple[float, int, str]] = []
    for vertical in kept:
        hits = search(
            vertical.index,
            weights,
            k=k_merge,
            query_time=cutoff,
            scorer="lmdir",
            mu=mu,
        )
        for entry in hits.entries:
            merged.append((entry.score, vertical.vertical_id, entry.doc_id))
    if not merged:
        raise EmptySelectionError("no vertical returned any document")
    merged.sort(key=lambda item: (-item[0], item[1], item[2]))
    merged = merged[:k_merge]
    counts: dict[int, int] = {}
    for _, vertical_id, _ in merged:
        counts[vertical_id] = counts.get(vertical_id, 0) + 1
    total = len(merged)
    selected = tuple(
        SelectedVertical(vertical_id=vid, weight=counts[vid] / total)
        for vid in sorted(counts)
    )
    return VerticalSelection(query_id=query_id, selected=selected)


def vertical_temporal_density(
    vertical: Vertical,
    query: Mapping[str, float] | Sequence[str],
    *,
    n_fb: int = DEFAULT_N_FB,
    scheme: str = "rank",
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
    bandwidth: float | None = None,
) -> TemporalDensity:
    """Weighted KDE over the timestamps of a vertical's feedback documents."""
    cutoff = math.inf if query_time is None else query_time
    hits = search(
        vertical.index, query, k=n_fb, query_time=cutoff, scorer="lmdir", mu=mu
    )
    if not hits.entries:
        raise DegenerateDensityError(
            f"vertical {vertical.vertical_id} returned no feedback documents"
        )
    weights = feedback_weights(hits, scheme)
    timestamps = [
        vertical.index.document(e.doc_id).timestamp for e in hits.entries
    ]
    return kde_fit(timestamps, weights, bandwidth=bandwidth)


def attach_densities(
    selection: VerticalSelection,
    verticals_by_id: Mapping[int, Vertical],
    query: Mapping[str, float] | Sequence[str],
    *,
    n_fb: int = DEFAULT_N_FB,
    scheme: str = "rank",
    mu: float = DEFAULT_MU,
    query_time: float | None = None,
) -> VerticalSelection:
    """Fit each selected vertical's density, dropping ones that degenerate."""
    kept: list[SelectedVertical] = []
    for sel in selection.selected:
        try:
            density = vertical_temporal_density(
                verticals_by_id[sel.vertical_id],
                query,
                n_fb=n_fb,
                scheme=scheme,
                mu=mu,
                query_time=query_time,
            )
        except DegenerateDensityError:
            logger.warning(
                "dropping vertical %d: no feedback documents", sel.vertical_id
            )
            continue
        kept.append(replace(sel, density=density))
    if not kept:
        raise EmptySelectionError("every selected vertical degenerated")
    total = sum(s.weight for s in kept)
    kept = [replace(s, weight=s.weight / total) for s in kept]
    return VerticalSelection(query_id=selection.query_id, selected=tuple(kept))


def external_temporal_relevance(selection: VerticalSelection, t):
    """Mixture density sum_c f_c(t) * P(q|c) at scalar or array t."""
    if not selection.selected:
        raise EmptySelectionError("selection is empty")
    scalar = np.ndim(t) == 0
    grid = np.atleast_1d(np.asarray(t, dtype=float))
    total = np.zeros_like(grid)
    for sel in selection.selected:
        if sel.density is None:
            raise ValueError(
                f"vertical {sel.vertical_id} has no fitted density"
            )
        total += sel.weight * sel.density.evaluate(grid)
    return float(total[0]) if scalar else total

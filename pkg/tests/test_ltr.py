"""Feature extraction and coordinate-ascent training."""

import math

import numpy as np
import pytest

from temporafed.errors import NoRelevantDocumentsError
from temporafed.ltr import (
    FEATURE_NAMES,
    LOG_FLOOR,
    CoordinateAscentConfig,
    LTRModel,
    QueryCandidates,
    config_hash,
    feature_matrix,
    load_model,
    rerank,
    save_model,
    score_loglinear,
    train_coordinate_ascent,
    write_training_log,
)
from temporafed.retrieval import build_index, score_bm25, score_lm_dirichlet
from temporafed.temporal import kde_fit
from temporafed.verticals import SelectedVertical, VerticalSelection
from tests.conftest import make_corpus, make_doc


def oracle_average_precision(scores, labels, n_relevant):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] >= 1:
            hits += 1
            total += hits / rank
    return total / n_relevant


class TestFeatureMatrix:
    def build(self):
        corpus = make_corpus(
            make_doc(
                "d1", "storm alert", timestamp=1000,
                url_count=2, mention_count=1, is_reply=True,
                statuses_count=10, followers_count=100,
            ),
            make_doc("d2", "storm storm flood", timestamp=2000, hashtag_count=3),
        )
        return build_index(corpus)

    def test_composition_against_reference_scorers(self):
        index = self.build()
        corpus_density = kde_fit([1000.0], bandwidth=50.0)
        external = kde_fit([2000.0], bandwidth=100.0)
        selection = VerticalSelection(
            query_id="q", selected=(SelectedVertical(0, 1.0, external),)
        )
        got = feature_matrix(
            index, [0, 1], ["storm"],
            corpus_density=corpus_density, selection=selection,
        )

        bm25 = np.array([score_bm25(index, ["storm"], i) for i in (0, 1)])
        lo, hi = bm25.min(), bm25.max()
        bm25_norm = np.log(np.maximum((bm25 - lo) / (hi - lo), 1e-10))
        expected = np.array([
            [
                score_lm_dirichlet(index, ["storm"], 0),
                bm25_norm[0],
                0.0,  # idf is constant across candidates here
                math.log(max(corpus_density.evaluate(1000.0), 1e-10)),
                math.log(max(external.evaluate(1000.0), 1e-10)),
                math.log1p(2), math.log1p(2), math.log1p(0), math.log1p(1),
                1.0, 0.0, 1.0, 1.0,
                math.log1p(10), math.log1p(100),
            ],
            [
                score_lm_dirichlet(index, ["storm"], 1),
                bm25_norm[1],
                0.0,
                math.log(max(corpus_density.evaluate(2000.0), 1e-10)),
                math.log(max(external.evaluate(2000.0), 1e-10)),
                math.log1p(3), math.log1p(0), math.log1p(3), math.log1p(0),
                0.0, 1.0, 0.0, 0.0,
                math.log1p(0), math.log1p(0),
            ],
        ])
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)

    def test_missing_densities_floor(self):
        index = self.build()
        got = feature_matrix(index, [0, 1], ["storm"])
        assert (got[:, 3] == LOG_FLOOR).all()
        assert (got[:, 4] == LOG_FLOOR).all()

    def test_all_entries_finite(self):
        index = self.build()
        got = feature_matrix(index, [0, 1], ["storm", "unseen"])
        assert np.isfinite(got).all()

    def test_empty_candidate_set(self):
        index = self.build()
        got = feature_matrix(index, [], ["storm"])
        assert got.shape == (0, len(FEATURE_NAMES))


class TestScoreLoglinear:
    def test_zero_weights_gives_intercept(self):
        model = LTRModel(weights=np.zeros(3), intercept=2.5, feature_names=("a", "b", "c"))
        scores = score_loglinear(model, np.ones((4, 3)))
        np.testing.assert_allclose(scores, 2.5)

    def test_one_hot_picks_column(self):
        model = LTRModel(weights=np.array([0.0, 1.0]), feature_names=("a", "b"))
        features = np.array([[5.0, 1.0], [6.0, 2.0]])
        np.testing.assert_allclose(score_loglinear(model, features), [1.0, 2.0])

    def test_arity_mismatch_rejected(self):
        model = LTRModel(weights=np.ones(2), feature_names=("a", "b"))
        with pytest.raises(ValueError):
            score_loglinear(model, np.ones((3, 5)))

    def test_weight_count_checked_at_construction(self):
        with pytest.raises(ValueError):
            LTRModel(weights=np.ones(4), feature_names=("a", "b"))


def toy_training(seed=0, n_queries=3, n_docs=8):
    """One informative feature plus one noise feature."""
    rng = np.random.default_rng(seed)
    queries = []
    for qi in range(n_queries):
        labels = np.zeros(n_docs)
        labels[rng.choice(n_docs, size=3, replace=False)] = 1
        informative = 2.0 * labels + rng.uniform(0.0, 0.9, size=n_docs)
        noise = rng.normal(size=n_docs)
        features = np.column_stack([informative, noise])
        queries.append(
            QueryCandidates(
                query_id=f"q{qi}",
                doc_ids=[f"doc{j}" for j in range(n_docs)],
                features=features,
                labels=labels,
            )
        )
    return queries


class TestCoordinateAscent:
    def test_perfect_feature_reaches_map_one(self):
        queries = []
        for qi in range(2):
            labels = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
            queries.append(
                QueryCandidates(
                    query_id=f"q{qi}",
                    doc_ids=[f"d{j}" for j in range(5)],
                    features=labels.reshape(-1, 1).copy(),
                    labels=labels,
                )
            )
        model = train_coordinate_ascent(
            queries, CoordinateAscentConfig(restarts=1, seed=11)
        )
        assert model.map_trace[-1] == 1.0

    def test_beats_every_single_feature(self):
        queries = toy_training()
        model = train_coordinate_ascent(queries, CoordinateAscentConfig(seed=5))
        single_feature_maps = []
        for column in (0, 1):
            for sign in (1.0, -1.0):
                maps = [
                    oracle_average_precision(
                        sign * qc.features[:, column], qc.labels, qc.relevant_total()
                    )
                    for qc in queries
                ]
                single_feature_maps.append(sum(maps) / len(maps))
        assert model.map_trace[-1] >= max(single_feature_maps) - 1e-12

    def test_final_map_matches_independent_scoring(self):
        queries = toy_training(seed=3)
        model = train_coordinate_ascent(queries, CoordinateAscentConfig(seed=5))
        maps = [
            oracle_average_precision(
                list(score_loglinear(model, qc.features)),
                qc.labels,
                qc.relevant_total(),
            )
            for qc in queries
        ]
        assert math.isclose(model.map_trace[-1], sum(maps) / len(maps), rel_tol=1e-12)

    def test_trace_never_decreases(self):
        model = train_coordinate_ascent(
            toy_training(seed=1), CoordinateAscentConfig(seed=9)
        )
        assert all(b >= a for a, b in zip(model.map_trace, model.map_trace[1:]))

    def test_deterministic_for_fixed_seed(self):
        cfg = CoordinateAscentConfig(restarts=2, seed=13)
        a = train_coordinate_ascent(toy_training(), cfg)
        b = train_coordinate_ascent(toy_training(), cfg)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.map_trace == b.map_trace

    def test_zero_cycles_returns_initialization(self):
        cfg = CoordinateAscentConfig(restarts=1, max_cycles=0, seed=2)
        model = train_coordinate_ascent(toy_training(), cfg)
        assert len(model.map_trace) == 1
        init = np.random.default_rng(2).uniform(-1.0, 1.0, size=2)
        np.testing.assert_array_equal(model.weights, init)

    def test_unjudged_query_excluded(self, caplog):
        queries = toy_training()
        queries.append(
            QueryCandidates(
                query_id="empty",
                doc_ids=["d0", "d1"],
                features=np.zeros((2, 2)),
                labels=np.zeros(2),
            )
        )
        with caplog.at_level("WARNING"):
            model = train_coordinate_ascent(queries, CoordinateAscentConfig(seed=5))
        assert "empty" in caplog.text
        reference = train_coordinate_ascent(
            toy_training(), CoordinateAscentConfig(seed=5)
        )
        np.testing.assert_array_equal(model.weights, reference.weights)

    def test_all_queries_unjudged_raises(self):
        queries = [
            QueryCandidates(
                query_id="q0",
                doc_ids=["d0"],
                features=np.zeros((1, 2)),
                labels=np.zeros(1),
            )
        ]
        with pytest.raises(NoRelevantDocumentsError):
            train_coordinate_ascent(queries)

    def test_missed_relevants_cap_achievable_map(self):
        # one relevant candidate, but the judgments say two exist
        labels = np.array([1.0, 0.0, 0.0])
        queries = [
            QueryCandidates(
                query_id="q0",
                doc_ids=["d0", "d1", "d2"],
                features=labels.reshape(-1, 1).copy(),
                labels=labels,
                n_relevant=2,
            )
        ]
        model = train_coordinate_ascent(
            queries, CoordinateAscentConfig(restarts=1, seed=4)
        )
        assert model.map_trace[-1] == 0.5


class TestRerank:
    def test_orders_by_model_score(self):
        model = LTRModel(weights=np.array([1.0]), feature_names=("f",))
        out = rerank(model, "q", ["a", "b", "c"], np.array([[0.1], [0.9], [0.5]]))
        assert out.doc_ids() == ["b", "c", "a"]

    def test_sign_flip_reverses_order(self):
        model = LTRModel(weights=np.array([-1.0]), feature_names=("f",))
        out = rerank(model, "q", ["a", "b", "c"], np.array([[0.1], [0.9], [0.5]]))
        assert out.doc_ids() == ["a", "c", "b"]

    def test_ties_break_by_doc_id(self):
        model = LTRModel(weights=np.array([1.0]), feature_names=("f",))
        out = rerank(model, "q", ["zeta", "alpha"], np.array([[0.5], [0.5]]))
        assert out.doc_ids() == ["alpha", "zeta"]


class TestModelIO:
    def test_round_trip_exact(self, tmp_path):
        model = LTRModel(
            weights=np.array([0.1, -2.5, 1e-10]),
            intercept=0.75,
            feature_names=("a", "b", "c"),
        )
        path = tmp_path / "model.tsv"
        save_model(path, model, config_digest="cafe")
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.weights, model.weights)
        assert loaded.intercept == model.intercept
        assert loaded.feature_names == model.feature_names
        assert "config_hash=cafe" in path.read_text(encoding="utf-8")

    def test_config_hash_stable_and_order_free(self):
        a = config_hash({"mu": 2500, "seed": 42})
        b = config_hash({"seed": 42, "mu": 2500})
        assert a == b
        assert len(a) == 16
        assert a != config_hash({"mu": 2500, "seed": 43})

    def test_training_log_csv(self, tmp_path):
        path = tmp_path / "log.csv"
        write_training_log(path, [0.25, 0.5])
        assert path.read_text(encoding="utf-8").splitlines() == [
            "iteration,MAP",
            "0,0.250000",
            "1,0.500000",
        ]

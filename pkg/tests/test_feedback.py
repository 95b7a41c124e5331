"""Expansion models checked against brute-force reimplementations.

Each oracle below recomputes the model from first principles on a corpus
small enough to enumerate: per-vertical Dirichlet scores, softmax
posteriors, and explicit term accumulation.
"""

import math

import pytest
from hypothesis import given, strategies as st

from temporafed.errors import EmptyFeedbackError
from temporafed.feedback import (
    RelevanceModel,
    corpus_temporal_feedback,
    discrete_time_relevance_model,
    interpolate_query,
    query_language_model,
    relevance_model_external,
    time_based_relevance_model,
    truncate_renormalize,
    write_expansion_tsv,
)
from temporafed.retrieval import build_index
from temporafed.temporal import kde_fit
from temporafed.verticals import SelectedVertical, Vertical, VerticalSelection
from tests.conftest import make_corpus, make_doc

MU = 8.0


def oracle_lmdir(index, doc_id, query_terms, mu=MU):
    internal = index.internal(doc_id)
    tfs = index.term_freqs[internal]
    length = int(index.doc_lengths[internal])
    total = sum(index.cf.values())
    score = 0.0
    for term in query_terms:
        score += math.log((tfs.get(term, 0) + mu * index.cf[term] / total) / (length + mu))
    return score


def oracle_feedback_set(vertical, query_terms, mu=MU):
    """All docs containing a query term, scored, with softmax posteriors."""
    index = vertical.index
    candidates = [
        doc_id
        for internal, doc_id in enumerate(index.doc_ids)
        if any(t in index.term_freqs[internal] for t in query_terms)
    ]
    scored = sorted(
        ((oracle_lmdir(index, d, query_terms, mu), d) for d in candidates),
        key=lambda x: (-x[0], x[1]),
    )
    peak = max(s for s, _ in scored)
    raw = [math.exp(s - peak) for s, _ in scored]
    z = sum(raw)
    return [(d, r / z) for (_, d), r in zip(scored, raw)]


def doc_term_dist(index, doc_id):
    internal = index.internal(doc_id)
    length = int(index.doc_lengths[internal])
    return {t: tf / length for t, tf in index.term_freqs[internal].items()}


def make_vertical(vertical_id, *docs):
    return Vertical(vertical_id=vertical_id, index=build_index(make_corpus(*docs)))


@pytest.fixture
def external_pair():
    v0 = make_vertical(
        0,
        make_doc("e1", "burst fire alpha", timestamp=100),
        make_doc("e2", "burst burst alpha", timestamp=110),
        make_doc("e3", "calm water", timestamp=500),
    )
    v1 = make_vertical(
        1,
        make_doc("e4", "burst smoke", timestamp=105),
        make_doc("e5", "ember quiet", timestamp=900),
    )
    selection = VerticalSelection(
        query_id="q1",
        selected=(SelectedVertical(0, 0.6), SelectedVertical(1, 0.4)),
    )
    return selection, {0: v0, 1: v1}


def assert_models_close(actual, expected, tol=1e-9):
    assert set(actual) == set(expected)
    for term, weight in expected.items():
        assert math.isclose(actual[term], weight, rel_tol=tol, abs_tol=tol)


class TestQueryLanguageModel:
    def test_uniform_over_distinct_terms(self):
        assert query_language_model(["a", "b"]) == {"a": 0.5, "b": 0.5}

    def test_repeats_accumulate(self):
        model = query_language_model(["a", "a", "b"])
        assert math.isclose(model["a"], 2 / 3)
        assert math.isclose(model["b"], 1 / 3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            query_language_model([])


class TestTruncateRenormalize:
    def test_keeps_heaviest(self):
        out = truncate_renormalize({"a": 0.5, "b": 0.3, "c": 0.2}, 2)
        assert_models_close(out, {"a": 0.625, "b": 0.375})

    def test_ties_resolved_by_term(self):
        out = truncate_renormalize({"b": 0.4, "a": 0.4, "c": 0.2}, 2)
        assert set(out) == {"a", "b"}

    def test_no_positive_mass_rejected(self):
        with pytest.raises(EmptyFeedbackError):
            truncate_renormalize({"a": 0.0}, 5)


class TestRelevanceModelExternal:
    def oracle(self, selection, verticals, query_terms, n_terms):
        mass = {}
        for sel in selection.selected:
            vertical = verticals[sel.vertical_id]
            posteriors = oracle_feedback_set(vertical, query_terms)
            coef = sel.weight / len(posteriors)
            for doc_id, posterior in posteriors:
                for term, p in doc_term_dist(vertical.index, doc_id).items():
                    mass[term] = mass.get(term, 0.0) + coef * posterior * p
        ranked = sorted(mass.items(), key=lambda kv: (-kv[1], kv[0]))[:n_terms]
        z = sum(w for _, w in ranked)
        return {t: w / z for t, w in ranked}

    def test_matches_oracle(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        expected = self.oracle(selection, verticals, ["burst"], 10)
        assert_models_close(model.terms, expected)

    def test_truncation_applies(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=2, mu=MU
        )
        assert len(model.terms) == 2
        expected = self.oracle(selection, verticals, ["burst"], 2)
        assert_models_close(model.terms, expected)

    def test_normalized(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert math.isclose(sum(model.terms.values()), 1.0, abs_tol=1e-12)

    def test_provenance_covers_feedback_docs(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert model.provenance == frozenset(
            {(0, "e1"), (0, "e2"), (1, "e4")}
        )

    def test_attribution_tracks_surviving_terms(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=3,
            mu=MU, track_attribution=True,
        )
        assert set(model.attribution) == set(model.terms)
        # attribution holds raw mass: per-term totals stay proportional
        # to the normalized weights
        ratios = {
            term: sum(model.attribution[term].values()) / weight
            for term, weight in model.terms.items()
        }
        values = list(ratios.values())
        for v in values[1:]:
            assert math.isclose(v, values[0], rel_tol=1e-9)

    def test_n_fb_limits_feedback_set(self, external_pair):
        selection, verticals = external_pair
        model = relevance_model_external(
            selection, verticals, ["burst"], n_fb=1, n_terms=10, mu=MU
        )
        # only the top doc of each vertical contributes
        assert model.provenance == frozenset({(0, "e2"), (1, "e4")})

    def test_no_feedback_anywhere_raises(self, external_pair):
        selection, verticals = external_pair
        with pytest.raises(EmptyFeedbackError):
            relevance_model_external(
                selection, verticals, ["nowhere"], n_fb=10, mu=MU
            )


class TestTimeBasedRelevanceModel:
    def test_matches_oracle(self, external_pair):
        _, verticals = external_pair
        d0 = kde_fit([100.0, 110.0], bandwidth=20.0)
        d1 = kde_fit([105.0], bandwidth=50.0)
        selection = VerticalSelection(
            query_id="q1",
            selected=(SelectedVertical(0, 0.6, d0), SelectedVertical(1, 0.4, d1)),
        )

        def mixture(t):
            out = 0.0
            for sel, density in ((selection.selected[0], d0), (selection.selected[1], d1)):
                h, ts, ws = density.bandwidth, density.timestamps, density.weights
                f = sum(
                    w * math.exp(-((t - ti) ** 2) / (2 * h * h))
                    for ti, w in zip(ts, ws)
                ) / (len(ts) * h * math.sqrt(2 * math.pi))
                out += sel.weight * f
            return out

        mass = {}
        for sel in selection.selected:
            vertical = verticals[sel.vertical_id]
            posteriors = oracle_feedback_set(vertical, ["burst"])
            coef = sel.weight / len(posteriors)
            for doc_id, posterior in posteriors:
                t = vertical.index.document(doc_id).timestamp
                factor = coef * posterior * max(mixture(t), 1e-10)
                for term, p in doc_term_dist(vertical.index, doc_id).items():
                    mass[term] = mass.get(term, 0.0) + factor * p
        ranked = sorted(mass.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        z = sum(w for _, w in ranked)
        expected = {t: w / z for t, w in ranked}

        model = time_based_relevance_model(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert_models_close(model.terms, expected)

    def test_constant_density_reduces_to_plain_model(self):
        # all feedback docs share one timestamp, so the temporal factor is a
        # common constant that cancels in normalization
        v0 = make_vertical(
            0,
            make_doc("e1", "burst fire alpha", timestamp=100),
            make_doc("e2", "burst burst alpha", timestamp=100),
        )
        v1 = make_vertical(1, make_doc("e4", "burst smoke", timestamp=100))
        verticals = {0: v0, 1: v1}
        density = kde_fit([100.0, 100.0])
        selection = VerticalSelection(
            query_id="q",
            selected=(
                SelectedVertical(0, 0.6, density),
                SelectedVertical(1, 0.4, density),
            ),
        )
        plain = relevance_model_external(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        timed = time_based_relevance_model(
            selection, verticals, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert_models_close(timed.terms, plain.terms)

    def test_on_peak_documents_gain_mass(self):
        # two docs with identical text except a marker term; the on-peak one
        # should push its marker above the off-peak marker
        v0 = make_vertical(
            0,
            make_doc("on", "burst nearby", timestamp=1000),
            make_doc("off", "burst faraway", timestamp=500_000),
        )
        density = kde_fit([990.0, 1000.0, 1010.0], bandwidth=100.0)
        selection = VerticalSelection(
            query_id="q", selected=(SelectedVertical(0, 1.0, density),)
        )
        model = time_based_relevance_model(
            selection, {0: v0}, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert model.terms["nearby"] > model.terms["faraway"]


class TestDiscreteTimeModel:
    def test_matches_oracle(self):
        v0 = make_vertical(
            0,
            make_doc("e1", "burst fire alpha", timestamp=0),
            make_doc("e2", "burst burst alpha", timestamp=50),
        )
        v1 = make_vertical(1, make_doc("e4", "burst smoke", timestamp=1000))
        verticals = {0: v0, 1: v1}
        selection = VerticalSelection(
            query_id="q",
            selected=(SelectedVertical(0, 0.6), SelectedVertical(1, 0.4)),
        )
        period = 100.0
        # all three feedback timestamps: bins 0, 0, 10 -> P(T)=2/3 and 1/3
        mass = {}
        for sel in selection.selected:
            vertical = verticals[sel.vertical_id]
            posteriors = dict(oracle_feedback_set(vertical, ["burst"]))
            by_bin = {}
            for doc_id, p in posteriors.items():
                t = vertical.index.document(doc_id).timestamp
                by_bin.setdefault(int(t // period), []).append((doc_id, p))
            for bin_idx, members in by_bin.items():
                p_t = {0: 2 / 3, 10: 1 / 3}[bin_idx]
                denom = sum(p for _, p in members)
                for doc_id, p in members:
                    factor = sel.weight * p_t * (p / denom)
                    for term, pw in doc_term_dist(vertical.index, doc_id).items():
                        mass[term] = mass.get(term, 0.0) + factor * pw
        ranked = sorted(mass.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        z = sum(w for _, w in ranked)
        expected = {t: w / z for t, w in ranked}

        model = discrete_time_relevance_model(
            selection, verticals, ["burst"], period=period,
            n_fb=10, n_terms=10, mu=MU,
        )
        assert_models_close(model.terms, expected)

    def test_single_period_single_vertical_collapses(self):
        v0 = make_vertical(
            0,
            make_doc("e1", "burst fire alpha", timestamp=10),
            make_doc("e2", "burst burst alpha", timestamp=40),
            make_doc("e3", "burst calm", timestamp=70),
        )
        selection = VerticalSelection(
            query_id="q", selected=(SelectedVertical(0, 1.0),)
        )
        discrete = discrete_time_relevance_model(
            selection, {0: v0}, ["burst"], period=86_400.0,
            n_fb=10, n_terms=10, mu=MU,
        )
        plain = relevance_model_external(
            selection, {0: v0}, ["burst"], n_fb=10, n_terms=10, mu=MU
        )
        assert_models_close(discrete.terms, plain.terms)

    def test_heavy_period_dominates(self):
        # four docs at t~0 versus one straggler: the dominant period's
        # vocabulary should outrank the straggler's
        v0 = make_vertical(
            0,
            make_doc("a1", "surge early", timestamp=0),
            make_doc("a2", "surge early", timestamp=10),
            make_doc("a3", "surge early", timestamp=20),
            make_doc("a4", "surge early", timestamp=30),
            make_doc("b1", "surge late", timestamp=10_000),
        )
        selection = VerticalSelection(
            query_id="q", selected=(SelectedVertical(0, 1.0),)
        )
        model = discrete_time_relevance_model(
            selection, {0: v0}, ["surge"], period=100.0,
            n_fb=10, n_terms=10, mu=MU,
        )
        assert model.terms["early"] > model.terms["late"]


class TestInterpolateQuery:
    def test_lambda_one_is_original(self):
        feedback = RelevanceModel(terms={"x": 1.0})
        out = interpolate_query({"a": 0.5, "b": 0.5}, feedback, lam=1.0)
        assert out.final == {"a": 0.5, "b": 0.5}

    def test_lambda_zero_is_feedback(self):
        feedback = RelevanceModel(terms={"x": 0.7, "y": 0.3})
        out = interpolate_query({"a": 1.0}, feedback, lam=0.0)
        assert out.final == {"x": 0.7, "y": 0.3}

    def test_even_mix_by_hand(self):
        feedback = RelevanceModel(terms={"b": 0.6, "c": 0.4})
        out = interpolate_query({"a": 1.0}, feedback, lam=0.5)
        assert_models_close(out.final, {"a": 0.5, "b": 0.3, "c": 0.2})

    def test_shared_terms_add(self):
        feedback = RelevanceModel(terms={"a": 1.0})
        out = interpolate_query({"a": 1.0}, feedback, lam=0.25)
        assert_models_close(out.final, {"a": 1.0})

    def test_no_feedback_passthrough(self):
        out = interpolate_query({"a": 1.0}, None, lam=0.5)
        assert out.final == {"a": 1.0}
        assert out.feedback is None

    def test_lambda_out_of_range(self):
        with pytest.raises(ValueError):
            interpolate_query({"a": 1.0}, RelevanceModel(terms={"b": 1.0}), lam=1.5)

    @given(
        st.dictionaries(st.sampled_from("abcdef"), st.floats(0.01, 1.0), min_size=1),
        st.dictionaries(st.sampled_from("defghi"), st.floats(0.01, 1.0), min_size=1),
        st.floats(0.0, 1.0),
    )
    def test_mixing_normalized_models_stays_normalized(self, orig, fb, lam):
        orig = {t: w / sum(orig.values()) for t, w in orig.items()}
        fb = {t: w / sum(fb.values()) for t, w in fb.items()}
        out = interpolate_query(orig, RelevanceModel(terms=fb), lam=lam)
        assert math.isclose(sum(out.final.values()), 1.0, abs_tol=1e-9)
        assert all(w > 0 for w in out.final.values())


class TestCorpusTemporalFeedback:
    def burst_index(self):
        docs = [
            make_doc(f"d{i}", "storm warning tonight", timestamp=5000 + 10 * i)
            for i in range(5)
        ] + [
            make_doc("spread", "storm archive", timestamp=400_000),
            make_doc("later", "storm recap", timestamp=900_000),
        ]
        return build_index(make_corpus(*docs))

    def test_density_peaks_at_burst(self):
        index = self.burst_index()
        density = corpus_temporal_feedback(
            index, ["storm"], n_fb=10, query_time=1_000_000
        )
        assert density.evaluate(5020.0) > density.evaluate(650_000.0)

    def test_cutoff_excludes_future_docs(self):
        index = self.burst_index()
        density = corpus_temporal_feedback(
            index, ["storm"], n_fb=10, query_time=6000
        )
        assert density.n == 5

    def test_single_doc_fallback_bandwidth(self):
        index = self.burst_index()
        density = corpus_temporal_feedback(
            index, ["recap"], n_fb=10, query_time=1_000_000
        )
        assert density.n == 1
        assert density.bandwidth == 3600.0

    def test_weighted_query_accepted(self):
        index = self.burst_index()
        density = corpus_temporal_feedback(
            index, {"storm": 0.8, "warning": 0.2}, n_fb=3, query_time=1_000_000
        )
        assert density.n == 3

    def test_no_matches_raises(self):
        index = self.burst_index()
        with pytest.raises(EmptyFeedbackError):
            corpus_temporal_feedback(index, ["quake"], n_fb=10, query_time=1_000_000)


class TestExpansionTsv:
    def test_sorted_six_decimal_lines(self, tmp_path):
        path = tmp_path / "expansion.tsv"
        write_expansion_tsv(path, {"beta": 0.25, "alpha": 0.25, "gamma": 0.5})
        assert path.read_text(encoding="utf-8") == (
            "gamma\t0.500000\nalpha\t0.250000\nbeta\t0.250000\n"
        )

"""Generator invariants for the planted-burst benchmark."""

import json

import pytest

from temporafed import synthbench
from temporafed.corpus import read_account_stats, tokenize
from temporafed.evaluation import read_qrels, read_topics


def small_config(**overrides):
    params = dict(
        seed=7,
        n_queries=3,
        corpus_size=600,
        external_size=250,
        vocab_size=100,
        relevant_per_query=10,
        distractors_per_query=20,
        external_per_topic=40,
        span_days=30,
    )
    params.update(overrides)
    return synthbench.SynthConfig(**params)


@pytest.fixture(scope="module")
def data():
    return synthbench.generate(small_config())


class TestGenerate:
    def test_deterministic(self):
        a = synthbench.generate(small_config())
        b = synthbench.generate(small_config())
        assert a.documents == b.documents
        assert a.external == b.external
        assert a.topics == b.topics
        assert a.qrels.grades == b.qrels.grades

    def test_seed_changes_output(self):
        a = synthbench.generate(small_config())
        b = synthbench.generate(small_config(seed=8))
        assert a.documents != b.documents

    def test_sizes_and_unique_ids(self, data):
        assert len(data.documents) == 600
        assert len(data.external) == 250
        assert len({d["id"] for d in data.documents}) == 600
        assert len({d["id"] for d in data.external}) == 250

    def test_queries_use_two_topic_terms(self, data):
        for topic in data.topics:
            truth = data.ground_truth[topic.query_id]
            assert topic.text.split() == list(truth.query_terms)
            assert truth.query_terms == truth.topic_terms[:2]

    def test_topic_vocabularies_disjoint(self, data):
        seen = set()
        for truth in data.ground_truth.values():
            assert not seen & set(truth.topic_terms)
            seen.update(truth.topic_terms)

    def test_every_relevant_judged(self, data):
        for topic in data.topics:
            assert data.qrels.relevant_count(topic.query_id) == 10

    def test_some_distractors_judged_nonrelevant(self, data):
        zero_graded = sum(
            1
            for judgments in data.qrels.grades.values()
            for grade in judgments.values()
            if grade == 0
        )
        assert zero_graded > 0

    def test_judged_docs_precede_query_time(self, data):
        by_id = {d["id"]: d for d in data.documents}
        for topic in data.topics:
            for doc_id in data.qrels.grades[topic.query_id]:
                assert by_id[doc_id]["timestamp"] <= topic.query_time

    def test_bursts_close_before_query_time(self, data):
        for truth in data.ground_truth.values():
            assert all(b.end <= truth.query_time for b in truth.bursts)

    def test_full_concentration_pins_relevants_to_bursts(self):
        data = synthbench.generate(small_config(burst_concentration=1.0))
        by_id = {d["id"]: d for d in data.documents}
        for query_id, truth in data.ground_truth.items():
            for doc_id in data.qrels.relevant_docs(query_id):
                t = by_id[doc_id]["timestamp"]
                assert any(b.contains(t) for b in truth.bursts)

    def test_external_docs_mention_topics(self, data):
        external_tokens = [set(tokenize(d["text"])) for d in data.external]
        for truth in data.ground_truth.values():
            topical = [
                toks for toks in external_tokens if set(truth.topic_terms) & toks
            ]
            assert len(topical) >= 30

    def test_relevants_carry_auxiliary_terms(self, data):
        by_id = {d["id"]: d for d in data.documents}
        for query_id, truth in data.ground_truth.items():
            aux_vocab = set(truth.topic_terms[2:])
            for doc_id in data.qrels.relevant_docs(query_id):
                tokens = set(tokenize(by_id[doc_id]["text"]))
                assert len(aux_vocab & tokens) == 2

    def test_account_roster_includes_filtered_accounts(self, data):
        ids = {a.account_id for a in data.accounts}
        assert {"acct_quiet", "acct_chatty"} <= ids


class TestConfigValidation:
    def test_planted_docs_must_fit(self):
        with pytest.raises(ValueError):
            synthbench.generate(small_config(corpus_size=50))

    def test_concentration_bounds(self):
        with pytest.raises(ValueError):
            small_config(burst_concentration=0.0).validate()
        with pytest.raises(ValueError):
            small_config(external_concentration=1.5).validate()

    def test_minimum_span(self):
        with pytest.raises(ValueError):
            small_config(span_days=10).validate()


class TestWrite:
    def test_files_round_trip(self, data, tmp_path):
        paths = synthbench.write(data, tmp_path)
        with open(paths["corpus"], encoding="utf-8") as handle:
            lines = [json.loads(line) for line in handle]
        assert lines == data.documents
        assert read_topics(paths["topics"]) == data.topics
        assert read_qrels(paths["qrels"]).grades == data.qrels.grades
        accounts = read_account_stats(paths["accounts"])
        assert set(accounts) == {a.account_id for a in data.accounts}

    def test_write_deterministic(self, data, tmp_path):
        first = synthbench.write(data, tmp_path / "a")
        second = synthbench.write(data, tmp_path / "b")
        for key in first:
            assert first[key].read_bytes() == second[key].read_bytes()

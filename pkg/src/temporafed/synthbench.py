"""Seeded synthetic corpora with planted temporal bursts and ground truth.

Each query gets a disjoint topic vocabulary, one or two burst windows, and
three document populations in the main corpus: relevant documents whose
timestamps concentrate inside the bursts, lexically matched distractors
spread uniformly in time, and background noise. Relevant documents and
distractors draw the query terms identically, so lexical scores alone
cannot separate them; the burst timing can. The external corpus holds
topical documents that concentrate even more tightly inside the bursts,
giving cleaner temporal evidence than the main corpus's own feedback.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import AccountStats, write_account_stats, write_jsonl
from .evaluation import Qrels, Topic, write_qrels, write_topics

logger = logging.getLogger(__name__)

DAY = 86400


@dataclass(frozen=True)
class BurstWindow:
    start: int
    end: int

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class TopicGroundTruth:
    """Planted structure for one query, kept for directional checks."""

    query_id: str
    query_terms: tuple[str, ...]
    topic_terms: tuple[str, ...]
    bursts: tuple[BurstWindow, ...]
    query_time: int


@dataclass
class SynthConfig:
    seed: int = 42
    n_queries: int = 20
    corpus_size: int = 20000
    external_size: int = 5000
    vocab_size: int = 2000
    relevant_per_query: int = 30
    distractors_per_query: int = 90
    external_per_topic: int = 150
    burst_concentration: float = 0.8
    external_concentration: float = 0.95
    terms_per_topic: int = 6
    start_time: int = 1359676800
    span_days: int = 60

    def validate(self) -> None:
        planted = self.n_queries * (self.relevant_per_query + self.distractors_per_query)
        if planted > self.corpus_size:
            raise ValueError(
                f"corpus_size {self.corpus_size} cannot hold "
                f"{planted} planted documents"
            )
        if self.n_queries * self.external_per_topic > self.external_size:
            raise ValueError("external_size cannot hold the topical documents")
        if not 0.0 < self.burst_concentration <= 1.0:
            raise ValueError("burst_concentration must be in (0, 1]")
        if not 0.0 < self.external_concentration <= 1.0:
            raise ValueError("external_concentration must be in (0, 1]")
        if self.span_days < 20:
            raise ValueError("span must be at least 20 days")

    @property
    def noise_rate(self) -> float:
        planted = self.n_queries * (self.relevant_per_query + self.distractors_per_query)
        return 1.0 - planted / self.corpus_size


@dataclass
class SynthData:
    documents: list[dict]
    external: list[dict]
    topics: list[Topic]
    qrels: Qrels
    accounts: list[AccountStats]
    ground_truth: dict[str, TopicGroundTruth] = field(default_factory=dict)


def _background_sampler(rng: np.random.Generator, vocab_size: int):
    """Power-law unigram distribution over the background vocabulary."""
    ranks = np.arange(1, vocab_size + 1, dtype=float)
    probs = 1.0 / ranks
    probs /= probs.sum()
    terms = np.array([f"bg{i:04d}" for i in range(vocab_size)])

    def sample(k: int) -> list[str]:
        return list(terms[rng.choice(vocab_size, size=k, p=probs)])

    return sample


def _burst_timestamp(rng: np.random.Generator, burst: BurstWindow) -> int:
    """Truncated Gaussian centered in the window."""
    center = (burst.start + burst.end) / 2.0
    sd = max((burst.end - burst.start) / 4.0, 1.0)
    for _ in range(100):
        t = rng.normal(center, sd)
        if burst.start <= t < burst.end:
            return int(t)
    return int(center)


def _doc_timestamp(
    rng: np.random.Generator,
    bursts: tuple[BurstWindow, ...],
    concentration: float,
    low: int,
    high: int,
) -> int:
    if rng.random() < concentration:
        burst = bursts[int(rng.integers(len(bursts)))]
        return _burst_timestamp(rng, burst)
    return int(rng.integers(low, high))


def _decorate(rng: np.random.Generator, tokens: list[str], url_p: float) -> str:
    """Join tokens, sprinkling a URL, hashtag, or mention for metadata."""
    parts = list(tokens)
    if parts and rng.random() < 0.25:
        idx = int(rng.integers(len(parts)))
        parts[idx] = "#" + parts[idx]
    if rng.random() < url_p:
        parts.append(f"http://ex.am/{rng.integers(1_000_000)}")
    if rng.random() < 0.15:
        parts.insert(0, f"@user{rng.integers(500)}")
    return " ".join(parts)


def generate(config: SynthConfig) -> SynthData:
    """Build the benchmark deterministically from the config seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    background = _background_sampler(rng, config.vocab_size)
    start = config.start_time
    end = start + config.span_days * DAY

    topics: list[Topic] = []
    qrels = Qrels()
    ground_truth: dict[str, TopicGroundTruth] = {}
    documents: list[dict] = []
    external: list[dict] = []
    doc_serial = 0
    ext_serial = 0

    def next_doc_id() -> str:
        nonlocal doc_serial
        doc_serial += 1
        return f"d{doc_serial:07d}"

    def next_ext_id() -> str:
        nonlocal ext_serial
        ext_serial += 1
        return f"x{ext_serial:07d}"

    good_accounts = [
        AccountStats(
            account_id=f"acct{i:03d}",
            posts_per_day=float(rng.integers(12, 120)),
            reply_ratio=float(np.round(rng.uniform(0.0, 0.3), 3)),
        )
        for i in range(40)
    ]
    bad_accounts = [
        AccountStats(account_id="acct_quiet", posts_per_day=2.0, reply_ratio=0.1),
        AccountStats(account_id="acct_chatty", posts_per_day=50.0, reply_ratio=0.8),
    ]

    for q in range(config.n_queries):
        query_id = f"Q{q + 1:03d}"
        topic_terms = tuple(
            f"t{q:02d}w{j}" for j in range(config.terms_per_topic)
        )
        query_terms = topic_terms[:2]
        n_bursts = 1 + int(rng.random() < 0.4)
        latest_center = end - 12 * DAY
        centers = np.sort(
            rng.uniform(start + 3 * DAY, latest_center, size=n_bursts)
        )
        bursts = tuple(
            BurstWindow(
                start=int(c - rng.uniform(0.3, 0.8) * DAY),
                end=int(c + rng.uniform(0.3, 0.8) * DAY),
            )
            for c in centers
        )
        query_time = int(
            min(bursts[-1].end + rng.uniform(2.0, 6.0) * DAY, end - DAY)
        )
        topics.append(
            Topic(query_id=query_id, text=" ".join(query_terms), query_time=query_time)
        )
        ground_truth[query_id] = TopicGroundTruth(
            query_id=query_id,
            query_terms=query_terms,
            topic_terms=topic_terms,
            bursts=bursts,
            query_time=query_time,
        )

        for _ in range(config.relevant_per_query):
            doc_id = next_doc_id()
            aux = list(
                rng.choice(topic_terms[2:], size=2, replace=False)
            )
            tokens = list(query_terms) + aux + background(int(rng.integers(3, 7)))
            t = _doc_timestamp(
                rng, bursts, config.burst_concentration, start, query_time
            )
            documents.append(
                {
                    "id": doc_id,
                    "timestamp": t,
                    "text": _decorate(rng, tokens, url_p=0.5),
                    "followers_count": int(rng.lognormal(5.5, 1.0)),
                    "statuses_count": int(rng.lognormal(6.0, 1.0)),
                    "is_reply": bool(rng.random() < 0.05),
                }
            )
            qrels.add(query_id, doc_id, 2 if rng.random() < 0.3 else 1)

        for _ in range(config.distractors_per_query):
            doc_id = next_doc_id()
            aux = (
                list(rng.choice(topic_terms[2:], size=1))
                if rng.random() < 0.3
                else []
            )
            tokens = list(query_terms) + aux + background(int(rng.integers(3, 7)))
            t = int(rng.integers(start, query_time))
            documents.append(
                {
                    "id": doc_id,
                    "timestamp": t,
                    "text": _decorate(rng, tokens, url_p=0.3),
                    "followers_count": int(rng.lognormal(4.5, 1.0)),
                    "statuses_count": int(rng.lognormal(5.5, 1.0)),
                    "is_reply": bool(rng.random() < 0.3),
                }
            )
            if rng.random() < 0.5:
                qrels.add(query_id, doc_id, 0)

        for _ in range(config.external_per_topic):
            doc_id = next_ext_id()
            k_topic = int(rng.integers(2, 5))
            chosen = list(rng.choice(topic_terms, size=k_topic, replace=False))
            tokens = chosen + background(int(rng.integers(1, 4)))
            t = _doc_timestamp(
                rng, bursts, config.external_concentration, start, query_time
            )
            external.append(
                {
                    "id": doc_id,
                    "timestamp": t,
                    "text": _decorate(rng, tokens, url_p=0.6),
                    "account_id": good_accounts[
                        int(rng.integers(len(good_accounts)))
                    ].account_id,
                    "followers_count": int(rng.lognormal(6.0, 1.0)),
                    "statuses_count": int(rng.lognormal(7.0, 1.0)),
                }
            )

    n_noise = config.corpus_size - len(documents)
    for _ in range(n_noise):
        documents.append(
            {
                "id": next_doc_id(),
                "timestamp": int(rng.integers(start, end)),
                "text": _decorate(
                    rng, background(int(rng.integers(4, 9))), url_p=0.2
                ),
                "followers_count": int(rng.lognormal(4.5, 1.2)),
                "statuses_count": int(rng.lognormal(5.5, 1.2)),
                "is_reply": bool(rng.random() < 0.25),
            }
        )

    n_ext_noise = config.external_size - len(external)
    for i in range(n_ext_noise):
        account = (
            bad_accounts[i % 2]
            if i < 20
            else good_accounts[int(rng.integers(len(good_accounts)))]
        )
        external.append(
            {
                "id": next_ext_id(),
                "timestamp": int(rng.integers(start, end)),
                "text": _decorate(
                    rng, background(int(rng.integers(3, 8))), url_p=0.3
                ),
                "account_id": account.account_id,
            }
        )

    return SynthData(
        documents=documents,
        external=external,
        topics=topics,
        qrels=qrels,
        accounts=good_accounts + bad_accounts,
        ground_truth=ground_truth,
    )


def write(data: SynthData, outdir: str | Path) -> dict[str, Path]:
    """Write the four benchmark files plus account stats into outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": outdir / "corpus.jsonl",
        "external": outdir / "external.jsonl",
        "topics": outdir / "topics.tsv",
        "qrels": outdir / "qrels.txt",
        "accounts": outdir / "accounts.csv",
    }
    write_jsonl(paths["corpus"], data.documents)
    write_jsonl(paths["external"], data.external)
    write_topics(paths["topics"], data.topics)
    write_qrels(paths["qrels"], data.qrels)
    write_account_stats(paths["accounts"], data.accounts)
    return paths

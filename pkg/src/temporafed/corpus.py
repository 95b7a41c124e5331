"""Corpus ingestion: tokenization, document filters, and metadata extraction.

Documents are short timestamped posts read from JSONL. Ingestion normalizes
text into tokens, derives per-document metadata counts from the raw text, and
applies retweet, language, and account-quality filters before indexing.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .errors import EmptyCorpusError

logger = logging.getLogger(__name__)

# Pattern table for the removal classes. Fixed here rather than configurable:
# the exact boundary of each class matters less than applying the same one
# everywhere, deterministically.
URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
EMAIL_RE = re.compile(r"\S+@\S+\.\S+")
MENTION_RE = re.compile(r"(?<!\w)@\w+")
HASHTAG_RE = re.compile(r"(?<!\w)#\w+")
# "12:30", "12:30:45", "9:15pm", "3pm" and friends, checked on whole
# whitespace tokens (punctuation-stripped) and on split word pieces.
TIME_RE = re.compile(r"^\d{1,2}(?::\d{2}){0,2}(?:am|pm)?$")
NUMBER_RE = re.compile(r"^[+-]?\d+(?:[.,]\d+)*$")
WORD_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")

EMOTICONS = frozenset(
    [
        ":)", ":(", ":-)", ":-(", ":')", ":'(", ":d", ":-d", ":p", ":-p",
        ";)", ";-)", ";p", ":/", ":-/", ":|", ":o", ":-o", ":*", ":s",
        "=)", "=(", "=d", "=p", "<3", "</3", "xd", "xp", "^^", "^_^",
        "o.o", "o_o", "-_-", "._.", "t_t", ";_;", ":3",
    ]
)

# Posting-rate and reply-ratio thresholds for discarding low-quality or
# conversational accounts when building external collections.
MIN_POSTS_PER_DAY = 10.0
MAX_REPLY_RATIO = 1.0 / 3.0

LanguageClassifier = Callable[[str], str]


def english_stub_classifier(text: str) -> str:
    """Placeholder language classifier that labels every text as English."""
    return "en"


@dataclass(frozen=True)
class Metadata:
    """Per-document counts and flags derived at ingestion time."""

    doc_length: int = 0
    url_count: int = 0
    hashtag_count: int = 0
    mention_count: int = 0
    is_reply: bool = False
    is_retweet: bool = False
    statuses_count: int = 0
    followers_count: int = 0


@dataclass(frozen=True)
class Document:
    doc_id: str
    timestamp: int
    text: str
    tokens: tuple[str, ...]
    metadata: Metadata = field(default_factory=Metadata)
    account_id: str = ""


@dataclass(frozen=True)
class AccountStats:
    account_id: str
    posts_per_day: float
    reply_ratio: float


@dataclass
class IngestStats:
    """Counts of records dropped or rewritten during ingestion."""

    kept: int = 0
    malformed: int = 0
    duplicates: int = 0
    filtered_retweet: int = 0
    filtered_language: int = 0
    filtered_account: int = 0
    classifier_failures: int = 0


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of documents in ingestion order."""

    documents: tuple[Document, ...]
    stats: IngestStats = field(default_factory=IngestStats, compare=False)

    @property
    def n(self) -> int:
        return len(self.documents)

    def time_span(self) -> tuple[int, int]:
        times = [d.timestamp for d in self.documents]
        return min(times), max(times)


def tokenize(text: str) -> list[str]:
    """Normalize raw post text into index tokens.

    Lowercases and NFC-normalizes, removes URLs, email addresses, @mentions,
    bare numbers, times, and emoticons, and keeps hashtag bodies without the
    leading '#'. Deterministic for a fixed input.
    """
    text = unicodedata.normalize("NFC", text).lower()
    text = URL_RE.sub(" ", text)
    text = EMAIL_RE.sub(" ", text)
    tokens: list[str] = []
    for raw in text.split():
        if raw in EMOTICONS:
            continue
        if raw.startswith("@"):
            continue
        stripped = raw.strip(string.punctuation)
        if stripped in EMOTICONS:
            continue
        if TIME_RE.match(stripped):
            continue
        core = raw.lstrip("#")
        for piece in WORD_RE.findall(core):
            if NUMBER_RE.match(piece):
                continue
            if TIME_RE.match(piece):
                continue
            tokens.append(piece)
    return tokens


def filter_retweets(text: str, is_retweet: bool = False) -> bool:
    """True when the document should be discarded as a repost.

    Fires on the metadata flag or on a leading "RT " marker (exact case)
    after stripping leading whitespace.
    """
    return is_retweet or text.lstrip().startswith("RT ")


def filter_language(
    text: str,
    classifier: LanguageClassifier,
) -> tuple[bool, bool]:
    """Decide whether to discard a document as non-English.

    Returns (discard, classifier_failed). A classifier exception keeps the
    document and reports the failure so the caller can log it.
    """
    try:
        label = classifier(text)
    except Exception:
        logger.warning("language classifier failed; keeping document")
        return False, True
    return label != "en", False


def filter_account(stats: AccountStats) -> bool:
    """True when an account is too quiet or too conversational to keep.

    Either condition alone is sufficient grounds: rarely-posting accounts
    contribute little evidence and reply-heavy accounts are conversational
    rather than topical.
    """
    return (
        stats.posts_per_day < MIN_POSTS_PER_DAY
        or stats.reply_ratio > MAX_REPLY_RATIO
    )


def _metadata_from_record(record: Mapping, text: str, n_tokens: int) -> Metadata:
    return Metadata(
        doc_length=n_tokens,
        url_count=len(URL_RE.findall(text)),
        hashtag_count=len(HASHTAG_RE.findall(text)),
        mention_count=len(MENTION_RE.findall(text)),
        is_reply=bool(record.get("is_reply", False)),
        is_retweet=bool(record.get("is_retweet", False)),
        statuses_count=int(record.get("statuses_count", 0)),
        followers_count=int(record.get("followers_count", 0)),
    )


def _parse_record(record: Mapping) -> Optional[Document]:
    """Build a Document from a raw record, or None when malformed."""
    try:
        doc_id = str(record["id"])
        timestamp = int(record["timestamp"])
        text = record["text"]
    except (KeyError, TypeError, ValueError):
        return None
    if not doc_id or not isinstance(text, str) or timestamp < 0:
        return None
    tokens = tokenize(text)
    try:
        metadata = _metadata_from_record(record, text, len(tokens))
    except (TypeError, ValueError):
        return None
    return Document(
        doc_id=doc_id,
        timestamp=timestamp,
        text=text,
        tokens=tuple(tokens),
        metadata=metadata,
        account_id=str(record.get("account_id", "")),
    )


def ingest(
    records: Iterable[Mapping],
    *,
    classifier: LanguageClassifier | None = None,
    account_stats: Mapping[str, AccountStats] | None = None,
) -> Corpus:
    """Turn raw records into a filtered, tokenized corpus.

    Records failing to parse are skipped and counted. Retweets, non-English
    documents, and documents from filtered accounts are dropped. A repeated
    doc_id keeps its first position but takes the payload of the last record
    seen. Raises EmptyCorpusError when nothing survives.
    """
    if classifier is None:
        classifier = english_stub_classifier
    stats = IngestStats()
    docs: dict[str, Document] = {}
    for record in records:
        doc = _parse_record(record)
        if doc is None:
            stats.malformed += 1
            logger.warning("skipping malformed record: %r", record)
            continue
        if filter_retweets(doc.text, doc.metadata.is_retweet):
            stats.filtered_retweet += 1
            continue
        discard, failed = filter_language(doc.text, classifier)
        if failed:
            stats.classifier_failures += 1
        if discard:
            stats.filtered_language += 1
            continue
        if account_stats is not None and doc.account_id in account_stats:
            if filter_account(account_stats[doc.account_id]):
                stats.filtered_account += 1
                continue
        if doc.doc_id in docs:
            stats.duplicates += 1
            logger.warning("duplicate doc_id %s: keeping last record", doc.doc_id)
        docs[doc.doc_id] = doc
    if not docs:
        raise EmptyCorpusError("no documents survived ingestion")
    stats.kept = len(docs)
    return Corpus(documents=tuple(docs.values()), stats=stats)


def read_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield records from a JSONL file, skipping unparseable lines."""
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("%s:%d: unparseable JSON line", path, line_no)
                yield {"__malformed__": line_no}
                continue
            if not isinstance(record, dict):
                yield {"__malformed__": line_no}
                continue
            yield record


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def document_record(doc: Document) -> dict:
    """Serialize a document back to its JSONL record form."""
    record = {
        "id": doc.doc_id,
        "timestamp": doc.timestamp,
        "text": doc.text,
    }
    meta = doc.metadata
    if meta.followers_count:
        record["followers_count"] = meta.followers_count
    if meta.statuses_count:
        record["statuses_count"] = meta.statuses_count
    if meta.is_reply:
        record["is_reply"] = True
    if meta.is_retweet:
        record["is_retweet"] = True
    if doc.account_id:
        record["account_id"] = doc.account_id
    return record


def load_corpus(
    path: str | Path,
    *,
    classifier: LanguageClassifier | None = None,
    account_stats: Mapping[str, AccountStats] | None = None,
) -> Corpus:
    return ingest(
        read_jsonl(path), classifier=classifier, account_stats=account_stats
    )


def read_account_stats(path: str | Path) -> dict[str, AccountStats]:
    """Read account statistics from a CSV of account_id,posts_per_day,reply_ratio."""
    stats: dict[str, AccountStats] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.reader(handle):
            if not row or row[0] == "account_id":
                continue
            account_id, posts_per_day, reply_ratio = row[0], row[1], row[2]
            stats[account_id] = AccountStats(
                account_id=account_id,
                posts_per_day=float(posts_per_day),
                reply_ratio=float(reply_ratio),
            )
    return stats


def write_account_stats(path: str | Path, stats: Iterable[AccountStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["account_id", "posts_per_day", "reply_ratio"])
        for entry in stats:
            writer.writerow(
                [entry.account_id, entry.posts_per_day, entry.reply_ratio]
            )

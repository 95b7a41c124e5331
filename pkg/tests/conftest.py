"""Shared toy corpora and helpers for the test suite."""

import pytest

from temporafed.corpus import Corpus, Document, Metadata, tokenize
from temporafed.retrieval import build_index


def make_doc(doc_id, text, timestamp=0, **meta_kwargs):
    """Build a Document without going through JSONL ingestion."""
    tokens = tuple(tokenize(text))
    defaults = dict(doc_length=len(tokens))
    defaults.update(meta_kwargs)
    return Document(
        doc_id=doc_id,
        timestamp=timestamp,
        text=text,
        tokens=tokens,
        metadata=Metadata(**defaults),
    )


def make_corpus(*docs):
    return Corpus(documents=tuple(docs))


@pytest.fixture
def tiny_index():
    """Two documents: "a b a" and "b c". cf(a)=2, |C|=5."""
    corpus = make_corpus(
        make_doc("d1", "a b a", timestamp=100),
        make_doc("d2", "b c", timestamp=200),
    )
    return build_index(corpus)

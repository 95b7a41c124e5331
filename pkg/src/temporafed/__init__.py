"""Time-aware federated retrieval over timestamped short documents."""

from .corpus import Corpus, Document, ingest, load_corpus, tokenize
from .retrieval import Index, ScoredList, build_index, search
from .temporal import TemporalDensity, emd_1d, kde_fit, silverman_bandwidth
from .verticals import Vertical, VerticalSelection, build_verticals, select_verticals

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "Document",
    "Index",
    "ScoredList",
    "TemporalDensity",
    "Vertical",
    "VerticalSelection",
    "build_index",
    "build_verticals",
    "emd_1d",
    "ingest",
    "kde_fit",
    "load_corpus",
    "search",
    "select_verticals",
    "silverman_bandwidth",
    "tokenize",
    "__version__",
]

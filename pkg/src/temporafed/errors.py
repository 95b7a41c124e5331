"""Exception types shared across the package."""


class TemporafedError(Exception):
    """Base class for errors raised by this package."""


class EmptyCorpusError(TemporafedError):
    """Ingestion produced no documents after filtering."""


class DegenerateSampleError(TemporafedError):
    """A bandwidth rule was asked for fewer than two points or zero spread."""


class DegenerateDensityError(TemporafedError):
    """A temporal density was requested for an empty feedback set."""


class EmptySelectionError(TemporafedError):
    """Resource selection found no vertical returning any document."""


class EmptyFeedbackError(TemporafedError):
    """Every selected vertical produced an empty feedback set."""


class MismatchedBinningError(TemporafedError):
    """Two histograms do not share a period and aligned origins."""


class NoRelevantDocumentsError(TemporafedError):
    """A training set contains no relevant documents for any query."""


class FormatError(TemporafedError):
    """A delimited input file failed to parse.

    Carries the offending path and 1-based line number so command-line
    diagnostics can point at the exact spot.
    """

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no

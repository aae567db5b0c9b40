"""Exception hierarchy.

Two families matter to callers: :class:`IngestError` for bad input files
(the CLI maps these to exit code 2) and :class:`AnalysisError` for
well-formed inputs that cannot support the requested analysis (exit code 1).
"""


class KiwiExtremeError(Exception):
    """Base class for every error raised by this package."""


class IngestError(KiwiExtremeError):
    """A row or file that cannot be turned into domain records."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedRow(IngestError):
    pass


class MissingHeader(IngestError):
    pass


class DuplicateObservation(IngestError):
    pass


class DuplicateYield(IngestError):
    pass


class NegativeYield(IngestError):
    pass


class InvertedSpan(IngestError):
    pass


class SeverityOnFrost(IngestError):
    pass


class InconsistentTemperatures(IngestError):
    """Tmax below Tmin for the same station-day."""


class AnalysisError(KiwiExtremeError):
    pass


class ConfigInvalid(AnalysisError):
    pass


class EmptySeries(AnalysisError):
    pass


class OutOfRangeCoordinate(AnalysisError):
    pass


class NoStationForVariable(AnalysisError):
    pass


class TooFewRows(AnalysisError):
    pass


class EmptyCatalog(AnalysisError):
    pass


class InsufficientHistory(AnalysisError):
    pass


class DegenerateSample(AnalysisError):
    pass


class NonPositiveSample(AnalysisError):
    pass


class MissingYears(AnalysisError):
    def __init__(self, years):
        self.years = sorted(years)
        super().__init__(f"missing yield years: {self.years}")


class ZeroWindowMean(AnalysisError):
    pass


class MissingVariable(AnalysisError):
    pass

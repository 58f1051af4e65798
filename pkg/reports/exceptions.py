from traces.exceptions import ParseError


class ReportError(Exception):
    """Base class for metrics reporting errors."""


class EmptyInput(ReportError):
    """Nothing to aggregate."""


class LogParseError(ReportError, ParseError):
    """A training log is missing columns or holds non-numeric values."""

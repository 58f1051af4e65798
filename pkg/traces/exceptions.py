class TraceError(Exception):
    """Base class for request-trace errors."""


class ParseError(TraceError):
    """A trace line could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderingError(TraceError):
    """Events are out of time order, or a release precedes its create."""


class WarmStartUnreachable(TraceError):
    """The trace ran out before the warm-start utilization was reached."""

    def __init__(self, message, peak=None):
        self.peak = peak
        super().__init__(message)

class ExperimentError(Exception):
    """Base class for experiment configuration and orchestration errors."""


class ConfigError(ExperimentError):
    """A run configuration failed validation."""

    def __init__(self, message, errors=None):
        self.errors = errors or {}
        if self.errors:
            details = "; ".join(
                f"{field}: {' '.join(str(m) for m in messages)}"
                for field, messages in self.errors.items()
            )
            message = f"{message} ({details})"
        super().__init__(message)


class UnknownAblation(ExperimentError):
    """An ablate config names a variant or set that does not exist."""

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(ValueError):
    """Malformed on-disk artifact (pixmap, embedding bank, checkpoint)."""


class ProtocolError(ValueError):
    """Dataset violates the zero-shot protocol (train/test class overlap)."""


class NumericError(RuntimeError):
    """A non-finite value reached a point where the run cannot continue."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}

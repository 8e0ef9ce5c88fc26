"""Exception hierarchy shared across the package."""


class XsclError(Exception):
    """Base class for all package errors."""


class ManifestError(XsclError, ValueError):
    """Malformed manifest record; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(XsclError, ValueError):
    pass


class ConfigError(XsclError, ValueError):
    pass


class SamplingError(XsclError, ValueError):
    pass


class StateError(XsclError, RuntimeError):
    pass

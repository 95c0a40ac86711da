"""Exception hierarchy shared across the package."""


class TrafficlabError(Exception):
    """Base class for all package errors."""


class SchemaError(TrafficlabError, ValueError):
    """A CSV header does not match the documented schema."""


class DataIntegrityError(TrafficlabError, ValueError):
    """A data row violates a consistency rule."""


class ConfigurationError(TrafficlabError, ValueError):
    """Invalid configuration, bounds or GA settings."""


class SimulationError(TrafficlabError, RuntimeError):
    """A model produced a non-finite acceleration during simulation."""

    def __init__(self, message, event_id=None, step=None):
        self.event_id = event_id
        self.step = step
        super().__init__(message)


class DslError(TrafficlabError):
    """Base class for candidate-language errors."""


class ParseError(DslError, ValueError):
    """Lexing or parsing failure in candidate source text."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class CandidateRuntimeError(DslError, RuntimeError):
    """A candidate produced a non-finite value on some row."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class CandidateValidationError(DslError, ValueError):
    """A candidate failed static or probe validation."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)

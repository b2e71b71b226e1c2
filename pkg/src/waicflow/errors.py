"""Exception hierarchy.

The CLI maps UsageError (and subclasses) to exit code 2 and every other
WaicflowError to exit code 1; the service maps them to HTTP 400 / 500.
"""


class WaicflowError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(WaicflowError):
    """Caller passed invalid arguments, configuration, or input files."""


class ShapeError(UsageError):
    """Array dimensions do not match what an operation requires."""


class ParseError(UsageError):
    """A dataset, checkpoint, or config file is malformed."""


class UnsupportedVersionError(ParseError):
    """A persisted file declares a format version this build cannot read."""


class TrainingError(WaicflowError):
    """Optimization diverged or produced non-finite quantities."""


class EvaluationError(WaicflowError):
    """A model evaluation produced non-finite intermediates."""


class OracleError(WaicflowError):
    """A numerical test oracle could not produce a trustworthy value."""


class DegenerateDataError(WaicflowError):
    """Input data is degenerate for the requested operation."""

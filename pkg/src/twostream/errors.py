"""Shared exception types.

The CLI maps these onto process exit codes: usage problems exit 1, data and
format problems exit 2, solver or training divergence exits 3.
"""


class TwoStreamError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(TwoStreamError):
    """Bad command line or config file input."""


class ShapeError(TwoStreamError, ValueError):
    """Array dimensions do not match what an operation requires."""


class NumericError(TwoStreamError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class ConfigError(TwoStreamError, ValueError):
    """A configuration object fails validation."""


class DataError(TwoStreamError):
    """Missing or inconsistent data artifacts (clips, flow stacks, checkpoints)."""


class FormatError(DataError):
    """A serialized file does not parse.

    `offset` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ConvergenceError(TwoStreamError):
    """An iterative solve diverged.

    For the flow solver `level` is the pyramid level whose energy increased;
    for network training `batch_index` locates the first non-finite loss.
    """

    def __init__(self, message: str, level: int | None = None,
                 batch_index: int | None = None):
        super().__init__(message)
        self.level = level
        self.batch_index = batch_index

"""
Exception hierarchy for the felo simulator.

Every failure the simulator reports is a `FeloError`. The command line maps
`ConfigurationError` to exit code 1 and any other `FeloError` to exit code 2.
"""

from typing import Optional


class FeloError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(FeloError):
    """Invalid parameters, shapes, or configuration values.

    Attributes:
        key: Dotted configuration key at fault, when one is known.
    """

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key: Optional[str] = key


class DataError(FeloError):
    """Malformed input data: bad labels, IDX or checkpoint parse failures.

    Attributes:
        offset: Byte offset of the failure inside a binary file, if any.
    """

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset: Optional[int] = offset


class ProtocolError(FeloError):
    """A federated protocol step was invoked in an invalid state."""


class UsageError(FeloError):
    """Library API misuse, e.g. a backward pass without a recorded forward."""


class DivergenceError(FeloError):
    """An update produced non-finite parameter values."""


class RoundError(FeloError):
    """An error raised while executing one federated round.

    Attributes:
        round: Zero-based index of the failing round.
        cause: The original error.
    """

    def __init__(self, round_index: int, cause: FeloError) -> None:
        super().__init__(f"round {round_index}: {cause}")
        self.round: int = round_index
        self.cause: FeloError = cause

"""Exception types shared across the package.

Every error raised on purpose derives from PeslError so callers can
distinguish contract violations from genuine bugs. The CLI maps these
onto exit codes: config/usage -> 2, I/O and protocol -> 3, failed
numeric properties -> 1.
"""


class PeslError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PeslError, ValueError):
    """Operand dimensions are incompatible for the requested operation."""


class ContractError(PeslError, ValueError):
    """An input violates a documented precondition (non-finite entries,
    softmax rows that do not sum to one, malformed permutation indices)."""


class DomainError(PeslError, ValueError):
    """A scalar argument is outside its documented domain (negative
    counts, label out of range)."""


class ConfigError(PeslError, ValueError):
    """A configuration is invalid. The message names the offending field."""


class DataError(PeslError, ValueError):
    """A data file is malformed. The message names file and line."""


class DecodeError(PeslError, ValueError):
    """A byte stream cannot be decoded as a wire frame.

    `offset` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ProtocolError(PeslError, RuntimeError):
    """The remote peer violated the request/response protocol, or sent
    an ERROR frame. `code` mirrors the wire-level error code."""

    def __init__(self, message: str, code: int = 0):
        super().__init__(message)
        self.code = code


class HandshakeError(ProtocolError):
    """Edge and cloud disagree on model dimensions at HELLO time."""

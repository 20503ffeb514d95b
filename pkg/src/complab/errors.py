"""Exception hierarchy shared by every module."""


class ComplabError(Exception):
    pass


class DimensionError(ComplabError, ValueError):
    """Operand shapes do not conform."""


class ContractError(ComplabError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(ComplabError, ValueError):
    """Invalid model, policy, or experiment configuration."""


class TransferError(ComplabError):
    """Parameters could not be moved between two models."""

    def __init__(self, message, missing=()):
        self.missing = list(missing)
        if self.missing:
            message = f"{message}; missing: {', '.join(self.missing)}"
        super().__init__(message)


class FormatError(ComplabError, ValueError):
    """Malformed binary input; ``offset`` is the byte where parsing stopped."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericError(ComplabError, FloatingPointError):
    """NaN or Inf appeared in a forward or backward pass."""

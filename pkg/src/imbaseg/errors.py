"""Shared exception types.

Every error the library raises deliberately is one of these, so callers can
tell a bad argument from a bad file from a diverged optimization without
string-matching messages.
"""


class InvalidInputError(ValueError):
    """Array input violates a precondition (non-finite values, bad shape)."""


class DomainError(ValueError):
    """Scalar parameter outside its mathematical domain."""


class ConfigError(ValueError):
    """Config file problem. `path` is the dotted field path, e.g. 'loss.gamma'."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class FormatError(ValueError):
    """Malformed binary file. `offset` is the byte offset where parsing failed."""

    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


class EmptyMaskError(ValueError):
    """A metric that needs a non-empty mask was handed an empty one."""


class TrainingDivergence(RuntimeError):
    """Optimization produced non-finite parameters or gradients."""

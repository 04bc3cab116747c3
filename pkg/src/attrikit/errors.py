"""Exception types shared across the package."""


class AttrikitError(Exception):
    """Base class for all package-specific errors."""


class ParseError(AttrikitError):
    """Raised for any problem while parsing DSL source.

    Carries the character offset into the source at which the problem
    was detected.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(AttrikitError):
    """Raised when a model is evaluated or differentiated outside the
    mathematical domain of one of its subexpressions (sqrt of a negative
    number, division by zero, ...).  The offending subexpression is
    included in the message."""

    def __init__(self, reason: str, subexpression: str):
        super().__init__(f"{reason} in subexpression '{subexpression}'")
        self.subexpression = subexpression


class ArityError(AttrikitError):
    """Dimension of a point does not match the arity of the model, or the
    arity exceeds a configured cap."""


class UnknownModelError(AttrikitError):
    """Requested builtin model name does not exist."""


class NetworkFileError(AttrikitError):
    """Network file is malformed or internally inconsistent."""


class TrainingDivergedError(AttrikitError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: loss={loss!r}; "
            "reduce the learning rate"
        )
        self.epoch = epoch
        self.batch = batch

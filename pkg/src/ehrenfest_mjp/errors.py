"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """A numerical routine produced non-finite or unusable output."""


class UnreachableStateError(DomainError):
    """A state has zero marginal probability, so its reverse rate is undefined."""


class TrainingError(RuntimeError):
    """Training was aborted (for example on a non-finite loss)."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or has the wrong magic/version."""

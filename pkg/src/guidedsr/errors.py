"""Exception taxonomy shared across the package."""


class GuidedSRError(Exception):
    """Base class for all package errors."""


class DimensionError(GuidedSRError, ValueError):
    """Shape or extent mismatch between operands."""


class ContractError(GuidedSRError, ValueError):
    """An API precondition was violated (bad argument, wrong call order)."""


class NumericalError(GuidedSRError, ArithmeticError):
    """Non-finite values or a numerical routine failed to converge."""


class TrainingAbort(NumericalError):
    """Training stopped because the loss or gradients became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ArchiveError(GuidedSRError, ValueError):
    """Malformed tensor-archive bytes."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NotFittedError(GuidedSRError, AttributeError):
    """Estimator used before fit()."""

"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called outside its contract (shapes, ranges, keys)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or is numerically invalid."""


class FormatError(RuntimeError):
    """A serialized artifact (IDX file, tensor file, checkpoint) is malformed."""


class TrainingDiverged(NumericError):
    """Training hit a non-finite loss; carries epoch/step context."""

    def __init__(self, epoch: int, step: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {detail}")
        self.epoch = epoch
        self.step = step

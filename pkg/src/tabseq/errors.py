"""Exception hierarchy shared by every tabseq module."""


class TabSeqError(Exception):
    """Base class for all errors raised by tabseq."""


class ValidationError(TabSeqError):
    """Input violates a documented precondition or invariant."""


# tabledoc
class RaggedGrid(ValidationError):
    pass


class InvalidDocument(ValidationError):
    pass


# tokenizer
class CorpusTooSmall(ValidationError):
    pass


class UnknownId(ValidationError):
    pass


# pretrain_data
class NoCells(ValidationError):
    pass


class MalformedTarget(ValidationError):
    pass


# model / trainer
class InvalidConfig(ValidationError):
    pass


class IdOutOfRange(ValidationError):
    pass


class LengthExceeded(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class PadOnlyTarget(ValidationError):
    pass


class CheckpointError(TabSeqError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class NonFiniteLoss(TabSeqError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


# sqlexec
class SqlSyntaxError(ValidationError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownColumn(ValidationError):
    pass


class EmptyResult(TabSeqError):
    pass


class NonNumericAggregate(TabSeqError):
    pass


# tasks / metrics
class CellOutOfBounds(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class InputFormatError(TabSeqError):
    """A file could not be parsed (malformed JSON line, config syntax)."""

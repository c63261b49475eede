"""Exception types shared across the package."""


class CrowdGcnError(Exception):
    """Base class for all crowdgcn errors."""


class ParseError(CrowdGcnError):
    """A trajectory file line could not be parsed."""


class DataError(CrowdGcnError):
    """Input data violates a structural invariant (duplicates, gaps, ...)."""


class ShapeError(CrowdGcnError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(CrowdGcnError):
    """A non-finite value appeared where finite values are required."""


class DomainError(CrowdGcnError):
    """An argument lies outside the mathematical domain of an operation."""


class CheckpointError(CrowdGcnError):
    """A checkpoint file is malformed, truncated or version-incompatible."""


class TrainingDiverged(CrowdGcnError):
    """Training produced a non-finite loss; the last good state is retained.

    Attributes carry the most recent finite-loss state so callers can
    persist it: ``params``, ``optimizer_state``, ``log``, ``epoch``.
    """

    def __init__(self, message, params=None, optimizer_state=None, log=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.optimizer_state = optimizer_state
        self.log = log if log is not None else []
        self.epoch = epoch

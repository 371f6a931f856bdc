"""Exception types raised across the package."""


class GroundingError(Exception):
    """Base class for all package errors."""


class DegenerateSequence(GroundingError, ValueError):
    pass


class InvalidParam(GroundingError, ValueError):
    pass


class InvalidSimplex(GroundingError, ValueError):
    pass


class EmptyQuery(GroundingError, ValueError):
    pass


class DegenerateMask(GroundingError, ValueError):
    pass


class NothingToReconstruct(GroundingError, ValueError):
    pass


class InvalidMargins(GroundingError, ValueError):
    pass


class InvalidCorpus(GroundingError, ValueError):
    pass


class InvalidConfig(GroundingError, ValueError):
    pass


class AlignmentError(GroundingError, ValueError):
    pass


class TrainingDiverged(GroundingError, RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value

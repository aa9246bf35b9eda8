"""Exception hierarchy shared by every stage of the pipeline."""


class FairGenError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(FairGenError, ValueError):
    exit_code = 2


class DataError(FairGenError):
    exit_code = 3


class SchemaError(DataError, ValueError):
    """A feature file lacks a required column or has the wrong layout."""


class CorpusError(DataError):
    """The corpus content cannot support the requested operation."""


class AlignmentError(DataError):
    """Speech and behavior streams disagree on duration."""


class PairingError(DataError):
    """Generated and ground-truth video sets do not match."""


class MissingArtifactError(DataError):
    def __init__(self, path, producer):
        super().__init__(f"missing {path}; run `fairgen {producer}` first")
        self.path = path
        self.producer = producer


class ShapeError(FairGenError, ValueError):
    pass


class PreconditionError(FairGenError, ValueError):
    pass


class NumericError(FairGenError, FloatingPointError):
    """Raised when a training loss turns NaN/Inf."""

    exit_code = 4

    def __init__(self, step, losses, last_finite=None):
        msg = f"non-finite loss at step {step}: {losses}"
        if last_finite is not None:
            msg += f" (last finite: {last_finite})"
        super().__init__(msg)
        self.step = step
        self.losses = losses
        self.last_finite = last_finite

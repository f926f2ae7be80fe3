"""Exception types shared across spillnet modules."""


class SpillnetError(Exception):
    """Base class for every error raised by this package."""


# -- geometry ----------------------------------------------------------------

class InvalidGeometry(SpillnetError):
    pass


class ZeroVarianceShape(SpillnetError):
    pass


class EmptyInput(SpillnetError):
    pass


# -- ingestion ---------------------------------------------------------------

class IngestError(SpillnetError):
    pass


class BadMagic(IngestError):
    pass


class UnsupportedShape(IngestError):
    pass


class TruncatedFile(IngestError):
    pass


class InvalidRecord(IngestError):
    pass


class SchemaError(IngestError):
    """Canonical spill JSON violated its schema. Carries a JSON-pointer path."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


class GeometryError(IngestError):
    """A parsed document held coordinates the geometry layer rejected."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


class ParseError(IngestError):
    pass


# -- features / sequences ----------------------------------------------------

class InsufficientData(SpillnetError):
    pass


class UnknownScenario(SpillnetError):
    pass


# -- tensor / networks -------------------------------------------------------

class ShapeMismatch(SpillnetError):
    pass


class NotScalarLoss(SpillnetError):
    pass


class NumericalError(SpillnetError):
    pass


class EmptyDataset(SpillnetError):
    pass


# -- evaluation statistics ---------------------------------------------------

class ZeroMean(SpillnetError):
    pass


class LengthMismatch(SpillnetError):
    pass


class ZeroVariance(SpillnetError):
    pass


class TooFewNonzero(SpillnetError):
    pass


class AlignmentError(SpillnetError):
    pass


# -- coordination / simulation -----------------------------------------------

class UnknownAgent(SpillnetError):
    pass


class EmptyFleet(SpillnetError):
    pass


class MalformedMessage(SpillnetError):
    pass


class ConfigError(SpillnetError):
    pass

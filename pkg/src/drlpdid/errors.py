"""Exception hierarchy.

Every error carries a module-qualified ``code`` (``"panel.EmptyStack"``) and a
process exit status used by the command-line front end.
"""


class DrlpdidError(Exception):
    module = "drlpdid"
    exit_status = 1

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


class ConfigError(DrlpdidError):
    module = "cli"
    exit_status = 2


class DataError(DrlpdidError):
    exit_status = 3


class NumericalError(DrlpdidError):
    exit_status = 4


# panel
class InvalidPanel(DataError):
    module = "panel"


class InadmissibleBase(DataError):
    module = "panel"


class HorizonOutOfRange(DataError):
    module = "panel"


class EmptyStack(DataError):
    module = "panel"


# aggregation
class NoRetainedCells(DataError):
    module = "aggregation"


class AlignmentError(DataError):
    module = "aggregation"


# nuisance
class DegenerateBasis(NumericalError):
    module = "nuisance"


class IptDiverged(NumericalError):
    module = "nuisance"


class SeparationDetected(NumericalError):
    module = "nuisance"


class SingularNormalEquations(NumericalError):
    module = "nuisance"


# inference
class SingularJacobian(NumericalError):
    module = "inference"


class TooFewClusters(NumericalError):
    module = "inference"


class DegenerateBand(NumericalError):
    module = "inference"


# ingestion
class IngestionError(DataError):
    module = "io"

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class MissingColumn(IngestionError):
    pass


class DuplicateObservation(IngestionError):
    pass


class InvalidEntryDate(IngestionError):
    pass


class NonIntegerTime(IngestionError):
    pass


class TimeGap(IngestionError):
    pass


class MissingValue(IngestionError):
    pass


# simulation
class CampaignFailed(NumericalError):
    module = "simulation"

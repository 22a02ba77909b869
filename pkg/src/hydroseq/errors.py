"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numeric/training failures with 4.
"""


class HydroError(Exception):
    """Base class for every error raised by hydroseq."""


class ConfigError(HydroError):
    """Invalid run configuration. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(HydroError):
    pass


class ShapeError(DataError, ValueError):
    pass


class ContractError(DataError, ValueError):
    pass


class DomainError(DataError, ValueError):
    pass


class BoundsError(DataError, IndexError):
    pass


class IngestionError(DataError):
    pass


class AlignmentError(IngestionError):
    pass


class SchemaError(IngestionError):
    pass


class HarmonizationError(DataError):
    pass


class ImputationError(DataError):
    pass


class LookupFeatureError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateInputError(DataError, ValueError):
    pass


class NumericError(HydroError, ArithmeticError):
    pass


class TrainingError(NumericError):
    pass


class CheckpointFormatError(DataError):
    """Raised for unreadable checkpoints; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

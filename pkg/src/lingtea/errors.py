"""Exception hierarchy.

Each family maps onto a CLI exit code: configuration problems exit with 2,
data problems with 3, numeric failures with 4.
"""


class LingTeaError(Exception):
    exit_code = 1


# -- tensor / model contracts -------------------------------------------------

class DimensionError(LingTeaError, ValueError):
    pass


class ContractError(LingTeaError, RuntimeError):
    pass


class VocabularyError(LingTeaError, ValueError):
    pass


class LengthError(LingTeaError, ValueError):
    pass


class StructureError(LingTeaError, ValueError):
    """Parameter groups of two models (or a task vector) do not line up."""


# -- checkpoint I/O -----------------------------------------------------------

class CheckpointError(LingTeaError, IOError):
    exit_code = 3


class CheckpointFormatError(CheckpointError):
    """Bad magic string or unsupported version."""


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, StructureError):
    pass


# -- data ---------------------------------------------------------------------

class DataError(LingTeaError, ValueError):
    exit_code = 3


class MissingLanguageError(DataError):
    pass


class AlignmentError(DataError):
    def __init__(self, message, item_id=None):
        super().__init__(message)
        self.item_id = item_id


class DisjointnessError(DataError):
    def __init__(self, message, item_id=None):
        super().__init__(message)
        self.item_id = item_id


class ManifestError(DataError):
    pass


class CapacityError(DataError):
    pass


class ClozeError(DataError):
    pass


# -- runtime ------------------------------------------------------------------

class NumericError(LingTeaError, ArithmeticError):
    exit_code = 4


class PretrainError(NumericError):
    """Memorization threshold not reached within the epoch budget."""


class ConfigError(LingTeaError, ValueError):
    exit_code = 2

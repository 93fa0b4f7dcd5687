"""Exception taxonomy shared by every module.

ConfigError: an invalid static configuration (shapes, budgets, config files).
DataError:   malformed external data (IDX files, checkpoints, labels).
UsageError:  API or CLI misuse (wrong call, bad flags).
"""


class VitCompressError(Exception):
    pass


class ConfigError(VitCompressError):
    pass


class DataError(VitCompressError):
    pass


class UsageError(VitCompressError):
    pass


class CheckpointVersionError(DataError):
    """Checkpoint format version is not one this code can migrate."""


class TrainingDiverged(VitCompressError):
    """Loss became non-finite; carries step diagnostics in the message."""

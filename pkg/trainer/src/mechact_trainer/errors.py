"""Error taxonomy, kept parallel to the dataset producer's CLI contract."""


class TrainerError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ConfigError(TrainerError):
    """Bad hyperparameters, flags, or phase/option combinations."""


class DataError(TrainerError):
    """A dataset file violates the record contract."""

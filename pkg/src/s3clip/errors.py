"""Exception hierarchy. The CLI maps each family to an exit code."""


class S3ClipError(Exception):
    exit_code = 3


class ConfigError(S3ClipError):
    exit_code = 2


class DataError(S3ClipError):
    exit_code = 4


class IngestError(DataError):
    pass


class ValidationError(DataError):
    pass


class SamplingError(DataError):
    pass


class TrainingError(S3ClipError):
    exit_code = 3


class PhaseLeakageError(TrainingError):
    """A parameter that should have been frozen changed during a phase."""


class CheckpointError(S3ClipError):
    exit_code = 3

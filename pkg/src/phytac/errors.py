"""Exception hierarchy. CLI exit codes hang off the three top-level families."""


class PhytacError(Exception):
    exit_code = 1


class ConfigError(PhytacError, ValueError):
    exit_code = 2


class MissingArtifactError(PhytacError, FileNotFoundError):
    exit_code = 3


class NumericalError(PhytacError, ArithmeticError):
    exit_code = 4


class ShapeError(PhytacError, ValueError):
    pass


class SingularMatrixError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


class InsufficientContactError(PhytacError, ValueError):
    pass


class ForceLimitError(PhytacError):
    pass


class UnstabilizableError(NumericalError):
    pass


class DatasetError(PhytacError):
    pass


class VersionMismatchError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class TruncatedRecordError(DatasetError):
    pass

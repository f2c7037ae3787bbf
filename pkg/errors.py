from __future__ import annotations


class WorkbenchError(Exception):
    """
    Base class for every failure the workbench reports on purpose.
    The CLI turns these into a one-line message and the exit code below.
    """

    exit_code: int = 2


class UsageError(WorkbenchError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(WorkbenchError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyDatasetError(DataError):
    pass


class FormatError(DataError):
    pass


class ValidationError(DataError):
    pass


class ShapeError(DataError):
    pass


class MissingArtifactError(DataError):
    def __init__(self, path: str, producer: str) -> None:
        super().__init__(f"missing artifact {path}; produce it with `{producer}` first")
        self.path = path
        self.producer = producer


class NumericalError(WorkbenchError):
    exit_code = 3


class DegenerateLossError(ValidationError):
    pass


class ArchitectureError(ConfigError):
    pass


class UndefinedMetricError(ValidationError):
    pass

"""Exception hierarchy shared by the library and the CLI."""


class PartkrigeError(Exception):
    """Base class. `exit_code` is what the CLI exits with."""

    exit_code = 1


class DataError(PartkrigeError):
    """Unreadable input, missing columns, bad values."""

    exit_code = 2


class ConfigError(PartkrigeError):
    exit_code = 2


class NumericError(PartkrigeError):
    """Cholesky failure, degenerate fit, non-finite quantity."""

    exit_code = 1


class ConvergenceError(NumericError):
    pass


class StageError(PartkrigeError):
    """An error raised inside a pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"{stage}: {cause}")

"""Exception hierarchy.

The CLI maps ``ValidationError`` subclasses to exit status 1 and everything
else derived from ``DemorphError`` to exit status 2.
"""


class DemorphError(Exception):
    pass


class ValidationError(DemorphError, ValueError):
    """Bad input, bad config or bad shape; the caller can fix it."""


class DimensionError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class GeometryError(ValidationError):
    pass


class CorrespondenceError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ProviderError(ValidationError):
    pass


class CalibrationError(ValidationError):
    pass


class AuditError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class SamplingError(ValidationError):
    pass


class TrainingError(DemorphError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ConfigParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        where = "" if line is None else f" at line {line}, column {column}"
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column

class PhqFaceError(Exception):
    pass


class ConfigError(PhqFaceError):
    """Bad run configuration or CLI usage."""


class DataValidationError(PhqFaceError):
    """Input files violate their documented schema or invariants."""


class SchemaError(DataValidationError):
    pass


class UndefinedMetricError(PhqFaceError):
    """A metric or statistic has no defined value for the given input."""


class DegenerateMetricWarning(UserWarning):
    """A metric fell back to its documented convention value."""

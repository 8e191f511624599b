"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3. Numerical preconditions inside the math kernels raise
plain ValueError.
"""


class GdaStreamError(Exception):
    """Base class for all package errors."""


class ConfigError(GdaStreamError):
    """Invalid configuration value or combination."""


class DataError(GdaStreamError):
    """Invalid, missing, or inconsistent input data."""


class StreamFormatError(DataError):
    """On-disk stream does not conform to the binary/manifest format."""


class HomogeneityTestInfeasible(DataError):
    """Too few usable classes to run the covariance homogeneity test."""


class InfeasibleDriftError(ConfigError):
    """Requested drift trajectory cannot satisfy the per-step KL budget."""

    def __init__(self, message: str, min_steps: int | None = None):
        super().__init__(message)
        self.min_steps = min_steps

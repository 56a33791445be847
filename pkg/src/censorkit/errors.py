"""Exception hierarchy shared across the package."""


class CensorKitError(Exception):
    """Base class; the CLI maps subclasses to distinct exit codes."""


class ShapeError(CensorKitError, ValueError):
    """Input extents do not match what a layer or network declares."""


class StaleCacheError(CensorKitError, RuntimeError):
    """``backward`` was called without a matching ``forward``."""


class TrainingDiverged(CensorKitError, RuntimeError):
    """A loss or gradient became non-finite.

    ``trace`` holds whatever steps completed before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UndefinedMetricError(CensorKitError, ValueError):
    """A metric is undefined on the given input (e.g. an empty group)."""


class IntractableOracleError(CensorKitError, ValueError):
    """Brute-force enumeration requested on too large a support."""


class IngestionError(CensorKitError, ValueError):
    """Raised while reading CSV / PGM / manifest inputs."""


class ConfigError(CensorKitError, ValueError):
    """Invalid experiment or training configuration."""

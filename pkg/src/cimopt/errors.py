"""Exception hierarchy shared across the package."""


class CimoptError(Exception):
    """Base class for all errors raised by this package."""


class WorkloadError(CimoptError):
    """Invalid workload file or layer definition."""


class ArchError(CimoptError):
    """Invalid architecture description."""


class EnumerationError(CimoptError):
    """Candidate enumeration failed (typically a size explosion)."""


class ModelBuildError(CimoptError):
    """Inconsistent inputs while assembling the optimization model."""


class SolveError(CimoptError):
    """Solver backend failure (bad command, unparsable solution, ...)."""


class DecodeError(CimoptError):
    """A solver assignment could not be decoded into a mapping."""


class ConfigError(CimoptError):
    """Missing or inconsistent run configuration (energies, flags, ...)."""

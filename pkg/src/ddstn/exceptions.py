"""Exception hierarchy shared by every module of the package."""


class DDSTNError(Exception):
    """Base class for all package errors."""


class DimensionError(DDSTNError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(DDSTNError, ValueError):
    """A precondition of an operation was violated."""


class DataError(DDSTNError, ValueError):
    """Input data is malformed (bad labels, duplicate ids, missing columns)."""


class ConfigError(DDSTNError, ValueError):
    """A configuration value is invalid."""


class SpecError(ConfigError):
    """A network layer specification is inconsistent."""


class MetricError(DDSTNError, ValueError):
    """A metric is undefined for the given inputs."""

"""Exception hierarchy.

Every error carries a ``category`` so the command line can prefix messages
with the module that raised them.
"""


class BonesegError(Exception):
    category = "error"


class GeometryError(BonesegError, ValueError):
    """Invalid or mismatched volume geometry."""

    category = "geometry"


class VolumeFormatError(BonesegError):
    category = "io"


class MalformedHeaderError(VolumeFormatError):
    pass


class DataSizeMismatchError(VolumeFormatError):
    pass


class UnknownDtypeError(VolumeFormatError):
    pass


class CheckpointError(BonesegError):
    category = "io"


class ConfigError(BonesegError, ValueError):
    category = "config"


class ShapeError(BonesegError, ValueError):
    """Input dims incompatible with the network's pooling depth."""

    category = "network"


class NumericError(BonesegError, ArithmeticError):
    category = "network"


class TrainingError(BonesegError, ValueError):
    category = "trainer"


class UndefinedMetricError(BonesegError, ValueError):
    """Surface metric requested for an empty target."""

    category = "metrics"


class PhantomError(BonesegError, ValueError):
    category = "phantom"


class CrossValidationError(BonesegError, ValueError):
    category = "crossval"

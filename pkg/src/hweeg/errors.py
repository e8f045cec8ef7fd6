"""Exception hierarchy shared by every module."""


class HweegError(ValueError):
    """Base class for all errors raised by hweeg."""


class FormatError(HweegError):
    """Malformed on-disk artifact (header, payload, event record)."""


class AlignmentError(HweegError):
    """An event could not be matched to a photodiode spike."""


class RankDeficientError(HweegError):
    """Data covariance is (numerically) singular."""


class DivergenceError(HweegError):
    """Training produced a non-finite loss."""


class ConfigError(HweegError):
    """Invalid or unknown configuration."""


class EpochBoundsError(HweegError):
    """Epoch window falls outside the recording."""

"""Exception types shared across the framework."""


class MtdError(Exception):
    """Base class for all framework errors."""


class ConfigError(MtdError):
    """Invalid or inconsistent configuration."""


class ClockError(MtdError):
    """Virtual time moved backwards."""


class NoSuchProcess(MtdError):
    """The pid does not name a live process."""


class RefusedWhitelisted(MtdError):
    """Refusal to kill a whitelisted process."""


class CollisionError(MtdError):
    """Requested IP address is already claimed."""


class RangeError(MtdError):
    """Requested IP address lies outside the subnet host range."""


class PathError(MtdError):
    """A virtual filesystem path does not exist or is invalid."""


class EndOfStream(MtdError):
    """Telemetry source has no further windows."""


class StratifyError(MtdError):
    """A class is too small to split into train and test."""


class TrainError(MtdError):
    """Classifier training cannot proceed."""


class ShapeError(MtdError):
    """Feature vector length does not match the model."""


class FormatError(MtdError):
    """Malformed model or data file."""


class NotConfigured(MtdError):
    """Reactive path used without a loaded model."""


class Exhausted(MtdError):
    """No migration candidates remain."""


class IntegrityError(MtdError):
    """Baseline or protected artifact failed an integrity check."""

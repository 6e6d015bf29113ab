"""Exception types raised across the package."""


class HGlanceError(Exception):
    """Base class for every error this package raises on purpose."""


class PoseOutOfWorkspace(HGlanceError):
    pass


class DegenerateDirection(HGlanceError):
    pass


class SceneSamplingError(HGlanceError):
    pass


class ShapeMismatch(HGlanceError, ValueError):
    pass


class EmptyInput(HGlanceError, ValueError):
    pass


class OrderViolation(HGlanceError, ValueError):
    pass


class SigmaTooSmall(HGlanceError, ValueError):
    pass


class IndexOutOfRange(HGlanceError, IndexError):
    pass


class NonFiniteGradient(HGlanceError, FloatingPointError):
    def __init__(self, entry, step=None):
        self.entry = entry
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite gradient in {entry!r}{where}")


class ChecksumMismatch(HGlanceError):
    pass


class CheckpointFormatError(HGlanceError):
    pass


class ConfigError(HGlanceError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


class RangeError(ConfigError):
    pass

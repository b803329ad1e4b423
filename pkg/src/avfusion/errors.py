"""Exception hierarchy shared across the package."""


class AVFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(AVFusionError, ValueError):
    """Operand shapes are incompatible."""


class MaskingError(AVFusionError, ValueError):
    """An attention query has no allowed key."""


class AlignmentError(AVFusionError, ValueError):
    """Audio and video streams do not share a time axis."""


class LengthError(AVFusionError, ValueError):
    """A sequence is too short for the requested operation."""


class SignalError(AVFusionError, ValueError):
    """A waveform has zero power where power is required."""


class ConfigError(AVFusionError, ValueError):
    """Invalid configuration value(s)."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UsageError(AVFusionError, ValueError):
    """An API was called outside its contract."""


class StateError(AVFusionError, ValueError):
    """Optimizer state does not match the parameters."""


class NumericError(AVFusionError, ArithmeticError):
    """Non-finite values appeared during training or evaluation."""


class CheckpointError(AVFusionError, OSError):
    """A checkpoint or tensor file is malformed or unreadable."""

class MetricVerifyError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MetricVerifyError, ValueError):
    pass


class ConfigurationError(MetricVerifyError, ValueError):
    pass


class NumericError(MetricVerifyError, ArithmeticError):
    pass


class DomainError(MetricVerifyError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class LabelError(MetricVerifyError, ValueError):
    pass


class DegenerateInputError(DomainError):
    """Zero-norm vectors where a direction is required."""


class PreconditionError(MetricVerifyError, ValueError):
    pass


class DatasetError(MetricVerifyError, ValueError):
    pass


class ProtocolError(MetricVerifyError, ValueError):
    """Evaluation inputs that the verification protocol cannot score."""


class TrainingError(MetricVerifyError, RuntimeError):
    """Training aborted; ``last_good`` holds the last finite model state if any."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class CheckpointError(MetricVerifyError, ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class FormatError(MetricVerifyError, ValueError):
    """Malformed embedding, pair-list or config file; message carries the line number."""

"""Exception types raised across the package."""


class HypadError(Exception):
    """Base class for package errors."""


class ShapeError(HypadError, ValueError):
    """Operands have incompatible shapes."""


class InvalidValueError(HypadError, ValueError):
    """A value lies outside the domain of an operation (NaN, inf, |x| >= 1, ...)."""


class ContractError(HypadError, ValueError):
    """A caller violated an operation's precondition."""


class ParseError(HypadError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(HypadError, ValueError):
    """Input data violates a structural invariant."""


class InsufficientDataError(DataError):
    pass


class SplitError(DataError):
    """A chronological split would put labeled anomalies in the training span."""


class SpecError(HypadError, ValueError):
    """Invalid synthetic-series specification."""


class ConfigError(HypadError, ValueError):
    pass


class CheckpointError(HypadError):
    pass


class TrainingDivergenceError(HypadError, FloatingPointError):
    """A loss became non-finite during training."""

    def __init__(self, message, epoch=None, step=None):
        context = []
        if epoch is not None:
            context.append(f"epoch {epoch}")
        if step is not None:
            context.append(f"step {step}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.epoch = epoch
        self.step = step

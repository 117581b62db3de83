"""Exception hierarchy shared by every nodecast module."""


class NodecastError(Exception):
    """Base class; the CLI maps any subclass to exit status 1."""


class ConfigError(NodecastError, ValueError):
    pass


class InputError(NodecastError, ValueError):
    pass


class ImputationError(NodecastError):
    pass


class FeatureError(NodecastError):
    pass


class NormalizationError(NodecastError):
    pass


class GraphError(NodecastError):
    pass


class ShapeError(NodecastError, ValueError):
    pass


class NumericError(NodecastError, FloatingPointError):
    pass


class GradCheckError(NodecastError):
    pass


class TrainingError(NodecastError):
    """Raised on non-finite losses or gradients; carries an optional snapshot path."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class BaselineError(NodecastError):
    pass


class MetricError(NodecastError):
    pass


class SignificanceError(NodecastError):
    pass


class BacktestError(NodecastError):
    pass


class StatError(NodecastError):
    pass


class PersistenceError(NodecastError):
    pass

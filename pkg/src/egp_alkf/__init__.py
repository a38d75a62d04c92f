"""Extended Gaussian processes with uncertain inputs, and an adaptive learning Kalman filter."""

from .egp import RegressionInput, RegressionOutput, TrainingSet, regress, regress_many
from .filter import AdaptiveLearningKalmanFilter, SystemModel
from .kernel import QuadraticMean, SquaredExponential, ZeroMean

__all__ = [
    "AdaptiveLearningKalmanFilter",
    "QuadraticMean",
    "RegressionInput",
    "RegressionOutput",
    "SquaredExponential",
    "SystemModel",
    "TrainingSet",
    "ZeroMean",
    "regress",
    "regress_many",
]

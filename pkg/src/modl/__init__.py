"""Online stacking of a closed-form Bayesian filter with neural learners on streams with missing features."""

from .estimators import (
    HedgeODLClassifier,
    MODLClassifier,
    OnlineBayesianLinearRegression,
    OnlineBayesianLogisticRegression,
)

__all__ = [
    "HedgeODLClassifier",
    "MODLClassifier",
    "OnlineBayesianLinearRegression",
    "OnlineBayesianLogisticRegression",
]

__version__ = "0.1.0"

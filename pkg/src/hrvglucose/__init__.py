"""Sleep-stage HRV features, age normalization and Bayesian ridge regression
for log-glucose prediction."""

__version__ = "0.1.0"

from .features import (AgeNormalizer, AgeNormParams, FeatureMatrix, FeatureOptions, age_normalize,
                       back_transform, build_feature_matrix, hrv_metrics, log_glucose)
from .model import (BayesianRidgeRegressor, FixedRidgeRegressor, LeastSquaresRegressor, RidgeHyperparams,
                    metrics, tolerance_analysis)
from .stats import CorrelationSelector, paired_t_test, pearson, select_features

__all__ = [
    "AgeNormParams",
    "AgeNormalizer",
    "BayesianRidgeRegressor",
    "CorrelationSelector",
    "FeatureMatrix",
    "FeatureOptions",
    "FixedRidgeRegressor",
    "LeastSquaresRegressor",
    "RidgeHyperparams",
    "age_normalize",
    "back_transform",
    "build_feature_matrix",
    "hrv_metrics",
    "log_glucose",
    "metrics",
    "paired_t_test",
    "pearson",
    "select_features",
    "tolerance_analysis",
]

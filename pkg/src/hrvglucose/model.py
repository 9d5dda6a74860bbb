"""Bayesian ridge regression by evidence maximization, regression metrics and
clinical tolerance bands."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from . import stats
from .features import back_transform

MODEL_FORMAT = "hrvglucose.bayesian-ridge"
MODEL_FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RidgeHyperparams:
    alpha_1: float = 1e-6
    alpha_2: float = 1e-6
    lambda_1: float = 1e-6
    lambda_2: float = 1e-6
    max_iter: int = 300
    tol: float = 1e-3

    def __post_init__(self):
        for name in ("alpha_1", "alpha_2", "lambda_1", "lambda_2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class ModelFit:
    """Posterior summary of a fitted Bayesian ridge model.

    Predictions are ``((X - x_offset) / x_scale) @ weights + intercept``.
    """

    weights: np.ndarray
    intercept: float
    alpha: float
    lambda_: float
    posterior_covariance: np.ndarray
    n_iter_used: int
    feature_names: tuple = ()
    x_offset: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    converged: bool = True

    def to_dict(self) -> dict:
        p = self.weights.size
        offset = np.zeros(p) if self.x_offset is None else self.x_offset
        scale = np.ones(p) if self.x_scale is None else self.x_scale
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "posterior_covariance": self.posterior_covariance.tolist(),
            "n_iter_used": self.n_iter_used,
            "converged": self.converged,
            "x_offset": list(map(float, offset)),
            "x_scale": list(map(float, scale)),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelFit":
        if d.get("format") != MODEL_FORMAT:
            raise ModelError(f"not a model file: format={d.get('format')!r}")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ModelError(f"unsupported model format version {d.get('version')}")
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            intercept=float(d["intercept"]),
            alpha=float(d["alpha"]),
            lambda_=float(d["lambda"]),
            posterior_covariance=np.asarray(d["posterior_covariance"], dtype=float).reshape(
                len(d["weights"]), len(d["weights"])),
            n_iter_used=int(d["n_iter_used"]),
            feature_names=tuple(d["feature_names"]),
            x_offset=np.asarray(d["x_offset"], dtype=float),
            x_scale=np.asarray(d["x_scale"], dtype=float),
            converged=bool(d.get("converged", True)),
        )

    @classmethod
    def load(cls, path) -> "ModelFit":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _posterior(eigvals, eigvecs, xty, alpha, lam):
    inv = 1.0 / (lam + alpha * eigvals)
    w = alpha * (eigvecs * inv) @ (eigvecs.T @ xty)
    return w, inv


def fit(X, y, h: RidgeHyperparams = RidgeHyperparams(), fixed_precision: tuple | None = None,
        feature_names=()) -> ModelFit:
    """Fit Bayesian ridge regression by evidence maximization.

    ``X`` is used as given apart from column centering; standardize upstream
    (see :class:`BayesianRidgeRegressor`). The noise precision starts at
    ``1 / var(y)`` and the weight precision at 1; both are re-estimated with
    Gamma hyperpriors until the summed absolute weight change drops below
    ``h.tol`` or ``h.max_iter`` is reached.

    Parameters
    ----------
    fixed_precision : (alpha, lambda), optional
        Skip the precision updates and return the posterior at these values.
        Intended for testing against the closed-form ridge solution.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ModelError("X must be 2-dimensional")
    n, p = X.shape
    if y.size != n:
        raise ModelError("X and y differ in length")
    if n < 2 or p < 1:
        raise ModelError(f"need >= 2 rows and >= 1 column, got {X.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ModelError("non-finite values in X or y")

    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean

    xtx = Xc.T @ Xc
    xty = Xc.T @ yc
    eigvals, eigvecs = np.linalg.eigh(xtx)
    eigvals = np.clip(eigvals, 0.0, None)

    converged = True
    if fixed_precision is not None:
        alpha, lam = map(float, fixed_precision)
        if not (alpha > 0 and lam > 0):
            raise ModelError("fixed precisions must be positive")
        n_iter = 0
    else:
        var_y = float(np.var(y))
        alpha = 1.0 / var_y if var_y > 0 else 1.0
        lam = 1.0
        w_old = None
        converged = False
        for n_iter in range(1, h.max_iter + 1):
            w, _ = _posterior(eigvals, eigvecs, xty, alpha, lam)
            gamma = float(np.sum(alpha * eigvals / (lam + alpha * eigvals)))
            resid = yc - Xc @ w
            lam = (gamma + 2.0 * h.lambda_1) / (float(w @ w) + 2.0 * h.lambda_2)
            alpha = (n - gamma + 2.0 * h.alpha_1) / (float(resid @ resid) + 2.0 * h.alpha_2)
            if w_old is not None and float(np.sum(np.abs(w_old - w))) < h.tol:
                converged = True
                break
            w_old = w

    w, inv = _posterior(eigvals, eigvecs, xty, alpha, lam)
    sigma = (eigvecs * inv) @ eigvecs.T
    sigma = 0.5 * (sigma + sigma.T)
    intercept = y_mean - float(x_mean @ w)
    names = tuple(feature_names) if feature_names is not None else ()
    return ModelFit(w, intercept, float(alpha), float(lam), sigma, n_iter, names,
                    np.zeros(p), np.ones(p), converged)


def predict(model: ModelFit, X, feature_names=None) -> np.ndarray:
    """Apply a fitted model; ``feature_names`` (or DataFrame columns) must match the fit."""
    names = feature_names if feature_names is not None else getattr(X, "columns", None)
    if names is not None and model.feature_names and tuple(map(str, names)) != model.feature_names:
        raise ModelError("column mismatch between fit and predict")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.weights.size:
        raise ModelError(f"column mismatch: expected {model.weights.size}, got {X.shape[1]}")
    offset = 0.0 if model.x_offset is None else model.x_offset
    scale = 1.0 if model.x_scale is None else model.x_scale
    return ((X - offset) / scale) @ model.weights + model.intercept


class BayesianRidgeRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn compatible Bayesian ridge regressor.

    Columns are z-scored with training statistics (sample SD) before the
    evidence-maximization fit; zero-variance columns are dropped for the fit
    with a warning and get a zero coefficient.

    Parameters
    ----------
    alpha_1, alpha_2 : float, default=1e-6
        Shape and rate of the Gamma prior on the noise precision.
    lambda_1, lambda_2 : float, default=1e-6
        Shape and rate of the Gamma prior on the weight precision.
    max_iter : int, default=300
    tol : float, default=1e-3
    standardize : bool, default=True

    Attributes
    ----------
    fit_ : ModelFit
        Posterior in standardized coordinates (kept columns only).
    coef_ : ndarray of shape (n_features,)
        Coefficients in the original feature units.
    intercept_ : float
    alpha_, lambda_ : float
    sigma_ : ndarray
    """

    def __init__(self, alpha_1=1e-6, alpha_2=1e-6, lambda_1=1e-6, lambda_2=1e-6,
                 max_iter=300, tol=1e-3, standardize=True):
        self.alpha_1 = alpha_1
        self.alpha_2 = alpha_2
        self.lambda_1 = lambda_1
        self.lambda_2 = lambda_2
        self.max_iter = max_iter
        self.tol = tol
        self.standardize = standardize

    def _hyperparams(self) -> RidgeHyperparams:
        return RidgeHyperparams(self.alpha_1, self.alpha_2, self.lambda_1, self.lambda_2,
                                self.max_iter, self.tol)

    def fit(self, X, y):
        names = getattr(X, "columns", None)
        X, y = validate_data(self, X, y, y_numeric=True)
        names = [str(c) for c in names] if names is not None else [f"x{j}" for j in range(X.shape[1])]
        X = np.asarray(X, dtype=float)
        if self.standardize:
            mean = X.mean(axis=0)
            sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
        else:
            mean = np.zeros(X.shape[1])
            sd = np.ones(X.shape[1])
        keep = sd > 0
        if not np.all(keep):
            dropped = [nm for nm, k in zip(names, keep) if not k]
            warnings.warn(f"dropping zero-variance column(s): {', '.join(dropped)}",
                          RuntimeWarning, stacklevel=2)
        if not np.any(keep):
            w = np.zeros(0)
            self.fit_ = ModelFit(w, float(np.mean(y)), 1.0, 1.0, np.zeros((0, 0)), 0, (),
                                 np.zeros(0), np.ones(0))
        else:
            Xs = (X[:, keep] - mean[keep]) / sd[keep]
            core = fit(Xs, y, self._hyperparams(), feature_names=[nm for nm, k in zip(names, keep) if k])
            # fold the training means into the offsets so predict sees raw inputs
            self.fit_ = replace(core, x_offset=mean[keep] + core.x_offset * sd[keep], x_scale=sd[keep])
        self.support_ = keep
        coef = np.zeros(X.shape[1])
        coef[keep] = self.fit_.weights / self.fit_.x_scale
        self.coef_ = coef
        self.intercept_ = float(self.fit_.intercept - np.sum(self.fit_.x_offset / self.fit_.x_scale * self.fit_.weights))
        self.alpha_ = self.fit_.alpha
        self.lambda_ = self.fit_.lambda_
        self.sigma_ = self.fit_.posterior_covariance
        self.n_iter_ = self.fit_.n_iter_used
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = validate_data(self, X, reset=False)
        X = np.asarray(X, dtype=float)
        return predict(self.fit_, X[:, self.support_])


class FixedRidgeRegressor(RegressorMixin, BaseEstimator):
    """Reference regressor: ridge with a fixed penalty on z-scored columns.

    ``penalty=0`` gives ordinary least squares (minimum-norm solution when
    the system is rank deficient). Zero-variance columns get a zero
    coefficient.

    Parameters
    ----------
    penalty : float, default=1.0
    """

    def __init__(self, penalty=1.0):
        self.penalty = penalty

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        mean = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
        keep = sd > 0
        coef = np.zeros(X.shape[1])
        if np.any(keep):
            Z = (X[:, keep] - mean[keep]) / sd[keep]
            yc = y - y.mean()
            if self.penalty == 0:
                w = np.linalg.lstsq(Z, yc, rcond=None)[0]
            else:
                w = np.linalg.solve(Z.T @ Z + self.penalty * np.eye(Z.shape[1]), Z.T @ yc)
            coef[keep] = w / sd[keep]
        self.coef_ = coef
        self.intercept_ = float(y.mean() - mean @ coef)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_


class LeastSquaresRegressor(FixedRidgeRegressor):
    """Ordinary least squares reference regressor."""

    def __init__(self):
        super().__init__(penalty=0.0)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    r2: float
    mae: float
    pearson_r: float
    pearson_p: float
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(y_true, y_pred) -> Metrics:
    """R², MAE and Pearson r/p of predictions.

    Pearson r and p are NaN when the predictions are constant.
    """
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ModelError("y_true and y_pred differ in length")
    if y_true.size < 2:
        raise ModelError("need at least 2 values")
    resid = y_true - y_pred
    ss_res = float(resid @ resid)
    dev = y_true - y_true.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0.0:
        raise ModelError("zero variance in y_true")
    r2 = 1.0 - ss_res / ss_tot
    mae = float(np.mean(np.abs(resid)))
    try:
        corr = stats.pearson(y_true, y_pred)
        r, p = corr.r, corr.p_value
    except stats.StatisticsError:
        r, p = math.nan, math.nan
    return Metrics(r2, mae, r, p, int(y_true.size))


DEFAULT_BANDS = (1.0, 1.5, 2.0)


def tolerance_analysis(y_true_log, y_pred_log, bands=DEFAULT_BANDS) -> dict[float, float]:
    """Share of predictions within ``±b`` mmol/L of truth, after undoing the log transform."""
    t = back_transform(np.atleast_1d(np.asarray(y_true_log, dtype=float)))
    p = back_transform(np.atleast_1d(np.asarray(y_pred_log, dtype=float)))
    if t.shape != p.shape or t.size == 0:
        raise ModelError("need equal-length, non-empty inputs")
    err = np.abs(t - p)
    return {float(b): float(np.mean(err <= b)) for b in bands}

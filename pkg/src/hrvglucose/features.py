"""Time-domain HRV metrics, age normalization, log-glucose target and the
cohort feature matrix."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .records import STAGES, RrSeries, SubjectRecord

logger = logging.getLogger(__name__)

METRICS = ("mean_rr", "rmssd", "sdnn", "pnn50", "rr_range")
NORMALIZED_SUFFIX = "_age_normalized"
TARGET_COLUMN = "log_glucose"
DEMOGRAPHIC_COLUMNS = ("age", "psqi_age")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class HrvMetrics:
    mean_rr: float
    rmssd: float
    sdnn: float
    pnn50: float
    rr_range: float
    undefined: tuple = ()

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def hrv_metrics(rr) -> HrvMetrics:
    """Mean RR, RMSSD, SDNN (n-1), pNN50 (strict ``> 50`` ms) and range of a series.

    A single interval yields mean and range; the successive-difference
    metrics and SDNN are NaN and listed in ``undefined``.
    """
    x = np.asarray(rr.intervals if isinstance(rr, RrSeries) else rr, dtype=float)
    if x.size == 0:
        raise FeatureError("empty RR series")
    mean_rr = float(x.mean())
    rr_range = float(x.max() - x.min())
    if x.size == 1:
        return HrvMetrics(mean_rr, math.nan, math.nan, math.nan, rr_range,
                          undefined=("rmssd", "sdnn", "pnn50"))
    d = np.diff(x)
    rmssd = float(np.sqrt(np.mean(d * d)))
    sdnn = float(x.std(ddof=1))
    pnn50 = 100.0 * np.count_nonzero(np.abs(d) > 50.0) / d.size
    return HrvMetrics(mean_rr, rmssd, sdnn, float(pnn50), rr_range)


@dataclass(frozen=True)
class AgeNormParams:
    reference_age: float = 65.0
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.reference_age > 0:
            raise ValueError("reference_age must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def age_normalize(raw, age, params: AgeNormParams = AgeNormParams()):
    """Scale an HRV value by ``1 / (age / reference_age + epsilon)``.

    Works elementwise on arrays; NaN inputs stay NaN.
    """
    age_arr = np.asarray(age, dtype=float)
    if np.any(~(age_arr > 0)):
        raise FeatureError(f"age must be positive, got {age}")
    out = np.asarray(raw, dtype=float) / (age_arr / params.reference_age + params.epsilon)
    return float(out) if out.ndim == 0 else out


def log_glucose(glucose):
    g = np.asarray(glucose, dtype=float)
    if np.any(~(g > 0)):
        raise FeatureError(f"glucose must be positive, got {glucose}")
    out = np.log(g)
    return float(out) if out.ndim == 0 else out


def back_transform(y):
    out = np.exp(np.asarray(y, dtype=float))
    return float(out) if out.ndim == 0 else out


def hrv_column(stage: str, metric: str, normalized: bool = False) -> str:
    return f"hrv_{stage.lower()}_{metric}" + (NORMALIZED_SUFFIX if normalized else "")


def column_kind(name: str) -> str:
    """Classify a feature column as ``hrv``, ``hrv_normalized``, ``demographic`` or ``clinical``."""
    if name.startswith("hrv_"):
        return "hrv_normalized" if name.endswith(NORMALIZED_SUFFIX) else "hrv"
    if name in DEMOGRAPHIC_COLUMNS:
        return "demographic"
    return "clinical"


@dataclass
class FeatureMatrix:
    """Named feature columns (rows = subjects) plus the log-glucose target.

    ``data`` is a DataFrame indexed by subject id; missing values are NaN.
    """

    data: pd.DataFrame
    target: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if len(self.data) != self.target.size:
            raise FeatureError("feature rows and target differ in length")
        if self.data.columns.duplicated().any():
            raise FeatureError("duplicate column names")
        if TARGET_COLUMN in self.data.columns:
            raise FeatureError(f"{TARGET_COLUMN!r} is reserved for the target")

    @property
    def subject_ids(self) -> list[str]:
        return [str(i) for i in self.data.index]

    @property
    def columns(self) -> list[str]:
        return list(self.data.columns)

    def column_dict(self, names: Iterable[str] | None = None, rows=None) -> dict[str, np.ndarray]:
        names = self.columns if names is None else list(names)
        frame = self.data if rows is None else self.data.iloc[rows]
        return {c: frame[c].to_numpy(dtype=float) for c in names}

    def columns_of_kind(self, *kinds: str) -> list[str]:
        return [c for c in self.columns if column_kind(c) in kinds]

    def restrict(self, names: Iterable[str]) -> "FeatureMatrix":
        names = list(names)
        return FeatureMatrix(self.data[names].copy(), self.target.copy(), dict(self.metadata))

    def to_csv(self, path, header: str = "") -> None:
        """Write ``subject_id``, the target and all columns; ``header`` is
        written verbatim first and should consist of ``#`` comment lines."""
        out = self.data.copy()
        out.insert(0, TARGET_COLUMN, self.target)
        out.index.name = "subject_id"
        with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header)
            out.to_csv(fh, na_rep="", float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        df = pd.read_csv(Path(path), dtype={"subject_id": str}, comment="#",
                         float_precision="round_trip").set_index("subject_id")
        if TARGET_COLUMN not in df.columns:
            raise FeatureError(f"feature file lacks the {TARGET_COLUMN!r} column")
        target = df.pop(TARGET_COLUMN).to_numpy(dtype=float)
        return cls(df.astype(float), target)


@dataclass(frozen=True)
class FeatureOptions:
    """Switches controlling which derived columns are emitted."""

    age_normalization: bool = True
    normalize_metrics: tuple = ("mean_rr",)
    psqi_age: bool = True
    psqi_column: str = "psqi"


def _psqi_value(clinical: Mapping[str, float], column: str):
    for key, value in clinical.items():
        if key.lower() == column.lower():
            return value
    return None


def subject_features(subject: SubjectRecord, stage_series: Mapping[str, RrSeries] | None,
                     params: AgeNormParams, options: FeatureOptions) -> dict[str, float]:
    """Feature row for one subject; stages lacking usable intervals give NaN."""
    row: dict[str, float] = {}
    stage_series = stage_series or {}
    for stage in STAGES:
        rr = stage_series.get(stage)
        values = hrv_metrics(rr).as_dict() if rr is not None and len(rr) else {m: math.nan for m in METRICS}
        for metric in METRICS:
            row[hrv_column(stage, metric)] = values[metric]
        if options.age_normalization:
            for metric in options.normalize_metrics:
                row[hrv_column(stage, metric, True)] = age_normalize(values[metric], subject.age, params)
    for key, value in subject.clinical.items():
        if key in row or key in DEMOGRAPHIC_COLUMNS:
            raise FeatureError(f"clinical column {key!r} collides with a derived feature name")
        row[key] = value
    row["age"] = subject.age
    if options.psqi_age:
        psqi = _psqi_value(subject.clinical, options.psqi_column)
        if psqi is not None:
            row["psqi_age"] = psqi * subject.age
    return row


def build_feature_matrix(cohort: Iterable[SubjectRecord], stage_series: Mapping[str, Mapping[str, RrSeries]],
                         params: AgeNormParams = AgeNormParams(),
                         options: FeatureOptions = FeatureOptions()) -> FeatureMatrix:
    """Assemble the cohort feature matrix in cohort order.

    Per stage: the five raw HRV metrics and, when enabled, the age-normalized
    mean RR; then all clinical columns, ``age`` and ``psqi_age``. The target
    is the natural log of glucose. Columns missing for every subject are
    dropped with a warning.
    """
    subjects = list(cohort)
    if not subjects:
        raise FeatureError("cohort is empty")
    rows = [subject_features(s, stage_series.get(s.subject_id), params, options) for s in subjects]
    order: list[str] = []
    for row in rows:
        order.extend(k for k in row if k not in order)
    df = pd.DataFrame(rows, columns=order, index=pd.Index([s.subject_id for s in subjects], name="subject_id"),
                      dtype=float)
    empty = [c for c in df.columns if df[c].isna().all()]
    if empty:
        warnings.warn(f"dropping all-missing column(s): {', '.join(empty)}", RuntimeWarning, stacklevel=2)
        df = df.drop(columns=empty)
    target = log_glucose([s.glucose for s in subjects])
    meta = {"age_norm": {"reference_age": params.reference_age, "epsilon": params.epsilon},
            "age_normalization": options.age_normalization}
    return FeatureMatrix(df, np.atleast_1d(target), meta)


class AgeNormalizer(TransformerMixin, BaseEstimator):
    """Append ``<column>_age_normalized`` copies of selected columns of a DataFrame.

    Parameters
    ----------
    columns : list of str or None
        Columns to normalize. ``None`` picks every ``hrv_*_mean_rr`` column.
    age_column : str
    reference_age, epsilon : float
    """

    def __init__(self, columns=None, age_column="age", reference_age=65.0, epsilon=0.1):
        self.columns = columns
        self.age_column = age_column
        self.reference_age = reference_age
        self.epsilon = epsilon

    def fit(self, X, y=None):
        if not isinstance(X, pd.DataFrame):
            raise TypeError("AgeNormalizer expects a pandas DataFrame")
        if self.columns is None:
            self.columns_ = [c for c in X.columns if c.startswith("hrv_") and c.endswith("_mean_rr")]
        else:
            self.columns_ = list(self.columns)
        missing = [c for c in [*self.columns_, self.age_column] if c not in X.columns]
        if missing:
            raise KeyError(f"missing column(s): {missing}")
        self.feature_names_in_ = np.asarray(X.columns, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        params = AgeNormParams(self.reference_age, self.epsilon)
        out = X.copy()
        age = X[self.age_column].to_numpy(dtype=float)
        for c in self.columns_:
            out[c + NORMALIZED_SUFFIX] = age_normalize(X[c].to_numpy(dtype=float), age, params)
        return out

    def get_feature_names_out(self, input_features=None):
        base = list(self.feature_names_in_ if input_features is None else input_features)
        return np.asarray(base + [c + NORMALIZED_SUFFIX for c in self.columns_], dtype=object)

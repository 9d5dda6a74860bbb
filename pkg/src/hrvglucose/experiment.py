"""Stratified cross-validation, ablation protocol and sleep-stage analysis."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import BaseCrossValidator

from . import stats
from .features import FeatureMatrix, column_kind
from .model import (DEFAULT_BANDS, BayesianRidgeRegressor, Metrics, ModelFit, RidgeHyperparams,
                    metrics, tolerance_analysis)
from .records import STAGES
from .rng import SplitMix64

logger = logging.getLogger(__name__)

SELECTION_MODES = ("global", "per_fold")
ABLATION_CONFIGS = ("Full", "NoAgeNorm", "NoSleepHrv", "EcgOnly", "ClinicalOnly")


class ExperimentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fold plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldPlan:
    assignments: np.ndarray
    k: int
    seed: int

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    def __eq__(self, other):
        return (isinstance(other, FoldPlan) and self.k == other.k and self.seed == other.seed
                and np.array_equal(self.assignments, other.assignments))

    @property
    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def split(self):
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)


def stratified_kfold(target, k: int = 5, seed: int = 42) -> FoldPlan:
    """Quantile-stratified fold assignment for a continuous target.

    Subjects are ordered by target (stable on ties), cut into ``k``
    contiguous quantile bins, shuffled within each bin by a seeded
    SplitMix64 stream, and dealt to folds by one round-robin counter that
    runs across bins, so fold sizes differ by at most one.
    """
    y = np.asarray(target, dtype=float).ravel()
    n = y.size
    if k < 2:
        raise ExperimentError("k must be >= 2")
    if n < k:
        raise ExperimentError(f"cannot split {n} subjects into {k} folds")
    order = np.argsort(y, kind="stable")
    rng = SplitMix64(seed)
    assignments = np.empty(n, dtype=np.int64)
    counter = 0
    for bin_idx in np.array_split(order, k):
        members = rng.shuffle([int(i) for i in bin_idx])
        for i in members:
            assignments[i] = counter % k
            counter += 1
    return FoldPlan(assignments, k, seed)


class QuantileStratifiedKFold(BaseCrossValidator):
    """Scikit-learn splitter wrapping :func:`stratified_kfold` (stratifies on ``y``)."""

    def __init__(self, n_splits: int = 5, seed: int = 42):
        self.n_splits = n_splits
        self.seed = seed

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_splits

    def split(self, X, y=None, groups=None):
        if y is None:
            raise ValueError("QuantileStratifiedKFold needs y")
        yield from stratified_kfold(y, self.n_splits, self.seed).split()

    def _iter_test_indices(self, X=None, y=None, groups=None):
        plan = stratified_kfold(y, self.n_splits, self.seed)
        for f in range(self.n_splits):
            yield plan.test_indices(f)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    train_index: np.ndarray
    test_index: np.ndarray
    selected: list[str]
    model: ModelFit | None
    train_means: dict[str, float]
    predictions: np.ndarray
    metrics: Metrics


@dataclass
class CvReport:
    folds: list[FoldResult]
    predictions: np.ndarray
    target: np.ndarray
    pooled: Metrics
    tolerance: dict[float, float]
    selection_mode: str
    seed: int
    k: int
    global_selection: stats.SelectionReport | None = None

    @property
    def per_fold(self) -> list[Metrics]:
        return [f.metrics for f in self.folds]

    def _summary(self, attr):
        values = np.array([getattr(m, attr) for m in self.per_fold], dtype=float)
        return float(values.mean()), float(values.std(ddof=1)) if values.size > 1 else math.nan

    @property
    def r2(self) -> tuple[float, float]:
        return self._summary("r2")

    @property
    def mae(self) -> tuple[float, float]:
        return self._summary("mae")

    @property
    def r2_cv_percent(self) -> float:
        mean, sd = self.r2
        return sd / mean * 100.0 if mean != 0 else math.nan

    @property
    def n_features(self) -> float:
        counts = [len(f.selected) for f in self.folds]
        return counts[0] if len(set(counts)) == 1 else float(np.mean(counts))

    def summary(self) -> dict:
        r2_mean, r2_sd = self.r2
        mae_mean, mae_sd = self.mae
        return {
            "selection_mode": self.selection_mode,
            "k": self.k,
            "seed": self.seed,
            "r2_mean": r2_mean,
            "r2_sd": r2_sd,
            "r2_cv_percent": self.r2_cv_percent,
            "mae_mean": mae_mean,
            "mae_sd": mae_sd,
            "pooled_r2": self.pooled.r2,
            "pooled_mae": self.pooled.mae,
            "pooled_pearson_r": self.pooled.pearson_r,
            "pooled_pearson_p": self.pooled.pearson_p,
            "n_features": self.n_features,
            "tolerance": {f"{b:g}": v for b, v in self.tolerance.items()},
        }


def _select(matrix, pool, rows, p_threshold, k):
    cols = matrix.column_dict(pool, rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return stats.select_features(cols, matrix.target[rows], p_threshold, min(k, len(pool)))


def _intercept_only(fold, train, test, target):
    mean = float(np.mean(target[train]))
    model = ModelFit(np.zeros(0), mean, 1.0, 1.0, np.zeros((0, 0)), 0, (), np.zeros(0), np.ones(0))
    pred = np.full(test.size, mean)
    return FoldResult(fold, train, test, [], model, {}, pred, metrics(target[test], pred))


def _run_fold(matrix, plan, fold, selected_global, pool, mode, h, p_threshold, k, allow_empty, estimator=None):
    train, test = plan.train_indices(fold), plan.test_indices(fold)
    if test.size < 2:
        raise ExperimentError(f"fold {fold} has fewer than 2 test rows")
    if mode == "per_fold":
        selected = _select(matrix, pool, train, p_threshold, k).selected
    else:
        selected = list(selected_global)
    if not selected:
        if allow_empty:
            logger.warning("fold %d: no feature passed selection; using the training mean", fold)
            return _intercept_only(fold, train, test, matrix.target)
        raise ExperimentError(f"fold {fold}: feature selection yielded zero features")
    X = matrix.data[selected].to_numpy(dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(X[train], axis=0)
    usable = np.isfinite(means)
    selected = [c for c, u in zip(selected, usable) if u]
    if not selected:
        raise ExperimentError(f"fold {fold}: selected features are missing for every training row")
    X = X[:, usable]
    means = means[usable]
    X = np.where(np.isnan(X), means, X)
    if estimator is None:
        est = BayesianRidgeRegressor(h.alpha_1, h.alpha_2, h.lambda_1, h.lambda_2, h.max_iter, h.tol)
    else:
        est = clone(estimator)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est.fit(X[train], matrix.target[train])
    pred = np.asarray(est.predict(X[test]), dtype=float)
    model = None
    if isinstance(est, BayesianRidgeRegressor):
        model = replace(est.fit_, feature_names=tuple(c for c, s in zip(selected, est.support_) if s))
    return FoldResult(fold, train, test, selected, model, dict(zip(selected, map(float, means))),
                      pred, metrics(matrix.target[test], pred))


def run_cv(matrix: FeatureMatrix, plan: FoldPlan, selection_mode: str = "global",
           h: RidgeHyperparams = RidgeHyperparams(), p_threshold: float = 0.2, k: int = 15,
           pool: list[str] | None = None, n_jobs: int = 1, bands=DEFAULT_BANDS,
           allow_empty_selection: bool = False, estimator=None) -> CvReport:
    """Cross-validate selection + Bayesian ridge over a fold plan.

    ``global`` selects features once on all rows; ``per_fold`` selects on
    each fold's training rows only. Standardization and missing-value fill
    always use training rows only. A fold whose selection comes back empty
    raises, unless ``allow_empty_selection`` is set, in which case it
    predicts the training mean. Any scikit-learn style regressor passed as
    ``estimator`` is cloned per fold in place of the Bayesian ridge (``h``
    is then ignored).
    """
    mode = selection_mode.replace("-", "_")
    if mode not in SELECTION_MODES:
        raise ExperimentError(f"unknown selection mode {selection_mode!r}")
    n = matrix.target.size
    if plan.assignments.size != n:
        raise ExperimentError("fold plan does not cover the matrix rows")
    pool = matrix.columns if pool is None else list(pool)
    if not pool:
        raise ExperimentError("empty candidate pool")
    global_report = None
    selected_global: list[str] = []
    if mode == "global":
        global_report = _select(matrix, pool, np.arange(n), p_threshold, k)
        selected_global = global_report.selected

    def job(f):
        return _run_fold(matrix, plan, f, selected_global, pool, mode, h, p_threshold, k,
                         allow_empty_selection, estimator)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            folds = list(ex.map(job, range(plan.k)))
    else:
        folds = [job(f) for f in range(plan.k)]

    predictions = np.empty(n)
    for fr in folds:
        predictions[fr.test_index] = fr.predictions
    pooled = metrics(matrix.target, predictions)
    tol = tolerance_analysis(matrix.target, predictions, bands)
    return CvReport(folds, predictions, matrix.target.copy(), pooled, tol, mode, plan.seed, plan.k,
                    global_report)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

def ablation_pool(matrix: FeatureMatrix, config: str) -> list[str]:
    """Candidate columns for one ablation configuration."""
    kinds = {c: column_kind(c) for c in matrix.columns}
    if config == "Full":
        keep = set(kinds)
    elif config == "NoAgeNorm":
        # raw mean-RR columns stay in the pool in place of the normalized ones
        keep = {c for c, kd in kinds.items() if kd != "hrv_normalized"}
    elif config == "NoSleepHrv":
        keep = {c for c, kd in kinds.items() if kd not in ("hrv", "hrv_normalized")}
    elif config == "EcgOnly":
        keep = {c for c, kd in kinds.items() if kd in ("hrv", "hrv_normalized")}
    elif config == "ClinicalOnly":
        keep = {c for c, kd in kinds.items() if kd == "clinical"}
    else:
        raise ExperimentError(f"unknown ablation configuration {config!r}")
    return [c for c in matrix.columns if c in keep]


@dataclass
class AblationRow:
    config: str
    pool_size: int
    report: CvReport
    delta_r2: float

    def to_dict(self) -> dict:
        r2, r2_sd = self.report.r2
        mae, mae_sd = self.report.mae
        return {"configuration": self.config, "r2": r2, "r2_sd": r2_sd, "mae": mae, "mae_sd": mae_sd,
                "features": self.report.n_features, "pool_size": self.pool_size,
                "delta_r2": self.delta_r2}


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)

    def __getitem__(self, config: str) -> AblationRow:
        for row in self.rows:
            if row.config == config:
                return row
        raise KeyError(config)

    @property
    def configs(self) -> list[str]:
        return [r.config for r in self.rows]


def run_ablation(matrix: FeatureMatrix, plan: FoldPlan, h: RidgeHyperparams = RidgeHyperparams(),
                 selection_mode: str = "global", p_threshold: float = 0.2, k: int = 15,
                 configs=ABLATION_CONFIGS, n_jobs: int = 1) -> AblationReport:
    """Rerun selection and CV for each configuration; ΔR² is relative to ``Full``.

    ``Full`` is always evaluated (it anchors ΔR²) but only reported when requested.
    """
    unknown = [c for c in configs if c not in ABLATION_CONFIGS]
    if unknown:
        raise ExperimentError(f"unknown ablation configuration(s): {unknown}")
    wanted = [c for c in ABLATION_CONFIGS if c in configs]
    to_run = wanted if "Full" in wanted else ["Full", *wanted]

    def job(config):
        pool = ablation_pool(matrix, config)
        if not pool:
            raise ExperimentError(f"empty feature pool for configuration {config}")
        return config, pool, run_cv(matrix, plan, selection_mode, h, p_threshold, min(k, len(pool)), pool,
                                    allow_empty_selection=True)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(job, to_run))
    else:
        results = [job(c) for c in to_run]
    full_r2 = next(rep.r2[0] for c, _, rep in results if c == "Full")
    rows = [AblationRow(c, len(pool), rep, 0.0 if c == "Full" else rep.r2[0] - full_r2)
            for c, pool, rep in results if c in wanted]
    return AblationReport(rows)


# ---------------------------------------------------------------------------
# sleep stages and model comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageSummary:
    stage: str
    n_columns: int
    mean_abs_r: float
    sd_abs_r: float
    min_abs_r: float
    max_abs_r: float
    sd_defined: bool
    correlations: tuple = ()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("stage", "n_columns", "mean_abs_r", "sd_abs_r", "min_abs_r", "max_abs_r", "sd_defined")}
        return d


def sleep_stage_analysis(matrix: FeatureMatrix, stages=STAGES) -> dict[str, StageSummary]:
    """Per stage, summarize ``|r|`` between each of its HRV columns (raw and normalized) and the target."""
    out = {}
    for stage in stages:
        prefix = f"hrv_{stage.lower()}_"
        cols = [c for c in matrix.columns if c.startswith(prefix)]
        if not cols:
            raise ExperimentError(f"no HRV columns for stage {stage}")
        ranked, _ = stats.rank_correlations(matrix.column_dict(cols), matrix.target)
        if not ranked:
            raise ExperimentError(f"no defined correlations for stage {stage}")
        r = np.array([abs(c.r) for c in ranked])
        sd_ok = r.size > 1
        out[stage] = StageSummary(stage, r.size, float(r.mean()), float(r.std(ddof=1)) if sd_ok else math.nan,
                                  float(r.min()), float(r.max()), sd_ok, tuple(ranked))
    return out


@dataclass(frozen=True)
class Comparison:
    t: float
    p: float
    mean_difference: float
    n_folds: int
    indistinguishable: bool = False

    def to_dict(self) -> dict:
        return {"t": self.t, "p": self.p, "mean_difference": self.mean_difference,
                "n_folds": self.n_folds, "indistinguishable": self.indistinguishable}


def compare_models(report_a: CvReport, report_b: CvReport) -> Comparison:
    """Paired t-test over per-fold R² of two reports built on the same fold plan."""
    a = np.array([m.r2 for m in report_a.per_fold])
    b = np.array([m.r2 for m in report_b.per_fold])
    if a.size != b.size:
        raise ExperimentError(f"fold-count mismatch: {a.size} vs {b.size}")
    diff = float(np.mean(a - b))
    try:
        t, p = stats.paired_t_test(a, b)
    except stats.StatisticsError:
        return Comparison(math.nan, math.nan, diff, int(a.size), indistinguishable=True)
    return Comparison(t, p, diff, int(a.size))

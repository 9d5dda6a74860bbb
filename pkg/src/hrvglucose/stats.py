"""Small-sample statistics: Pearson correlation, Student-t tails, paired t-test
and correlation-filter feature selection.

The Student-t distribution is evaluated through the regularized incomplete
beta function, implemented here with a modified Lentz continued fraction so
that p-values do not depend on the installed SciPy version.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

logger = logging.getLogger(__name__)

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


class StatisticsError(ValueError):
    """Raised when a statistic is undefined for the given data."""


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for I_x(a, b), valid for x < (a + 1) / (a + b + 2)
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``.

    Parameters
    ----------
    a, b : float
        Positive shape parameters.
    x : float
        Evaluation point in ``[0, 1]``.
    """
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, betainc(0.5 * df, 0.5, x)))


def t_cdf(t: float, df: float) -> float:
    """Cumulative distribution function of Student's t with ``df`` degrees of freedom."""
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


# ---------------------------------------------------------------------------
# correlation and t-tests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    feature_name: str
    r: float
    p_value: float
    n: int


def _pairwise_complete(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise StatisticsError(f"length mismatch: {x.size} vs {y.size}")
    keep = np.isfinite(x) & np.isfinite(y)
    return x[keep], y[keep]


def pearson(x, y, name: str = "") -> CorrelationResult:
    """Pearson product-moment correlation with a two-sided p-value.

    Entries where either vector is missing (NaN) are dropped pairwise before
    computing the statistic; ``n`` reports the number of complete pairs.

    Raises
    ------
    StatisticsError
        If fewer than 3 complete pairs remain or either vector has zero variance.
    """
    x, y = _pairwise_complete(x, y)
    n = x.size
    if n < 3:
        raise StatisticsError(f"need at least 3 complete pairs, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise StatisticsError("zero variance")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / ((1.0 - r) * (1.0 + r)))
        p = t_sf_two_sided(t, df)
    return CorrelationResult(feature_name=name, r=r, p_value=p, n=n)


def paired_t_test(a, b) -> tuple[float, float]:
    """Paired two-sided t-test on ``a - b``.

    Returns
    -------
    t, p : float
        Test statistic and two-sided p-value with ``n - 1`` degrees of freedom.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise StatisticsError(f"length mismatch: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise StatisticsError(f"need at least 2 pairs, got {n}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise StatisticsError("zero-variance differences")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return t, t_sf_two_sided(t, n - 1)


# ---------------------------------------------------------------------------
# feature selection
# ---------------------------------------------------------------------------

@dataclass
class SelectionReport:
    ranked: list[CorrelationResult]
    selected: list[str]
    p_threshold: float
    k: int
    skipped: list[str] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        """Ranked table rows: rank, feature, r, p, n, selected."""
        chosen = set(self.selected)
        return [
            {
                "rank": i + 1,
                "feature": c.feature_name,
                "r": c.r,
                "p": c.p_value,
                "n": c.n,
                "selected": c.feature_name in chosen,
            }
            for i, c in enumerate(self.ranked)
        ]


def rank_correlations(columns: dict[str, np.ndarray], target) -> tuple[list[CorrelationResult], list[str]]:
    """Correlate every column with ``target``; order by ``|r|`` descending, ties by name."""
    results, skipped = [], []
    for name in sorted(columns):
        try:
            results.append(pearson(columns[name], target, name=name))
        except StatisticsError:
            skipped.append(name)
    results.sort(key=lambda c: (-abs(c.r), c.feature_name))
    return results, skipped


def select_features(columns: dict[str, np.ndarray], target, p_threshold: float = 0.2,
                    k: int = 15) -> SelectionReport:
    """Correlation-filter selection: keep ``p < p_threshold``, then the top ``k`` by ``|r|``.

    Columns whose correlation is undefined (constant, fewer than 3 complete
    pairs) are listed in ``skipped``. An empty selection emits a warning
    instead of raising.
    """
    if not columns:
        raise StatisticsError("no candidate columns")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked, skipped = rank_correlations(columns, target)
    survivors = [c for c in ranked if c.p_value < p_threshold]
    selected = [c.feature_name for c in survivors[:k]]
    if not selected:
        warnings.warn(f"no feature passed p < {p_threshold}", RuntimeWarning, stacklevel=2)
    return SelectionReport(ranked=ranked, selected=selected, p_threshold=p_threshold, k=k,
                           skipped=skipped)


class CorrelationSelector(SelectorMixin, BaseEstimator):
    """Keep the ``k`` columns most correlated with ``y`` among those with ``p < p_threshold``.

    Missing values are handled by pairwise deletion per column. When fitted on
    a DataFrame, ``feature_names_in_`` drives the name-based tie-break;
    otherwise columns are named ``x0, x1, ...``.

    Parameters
    ----------
    p_threshold : float, default=0.2
    k : int, default=15
    """

    def __init__(self, p_threshold: float = 0.2, k: int = 15):
        self.p_threshold = p_threshold
        self.k = k

    def fit(self, X, y):
        names = getattr(X, "columns", None)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if names is not None:
            self.feature_names_in_ = np.asarray([str(c) for c in names], dtype=object)
        else:
            names = [f"x{j}" for j in range(X.shape[1])]
        names = [str(c) for c in names]
        self.n_features_in_ = X.shape[1]
        self.report_ = select_features({nm: X[:, j] for j, nm in enumerate(names)}, y,
                                       p_threshold=self.p_threshold, k=self.k)
        chosen = set(self.report_.selected)
        self.support_ = np.array([nm in chosen for nm in names], dtype=bool)
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

import math
import warnings

import numpy as np
import pytest
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gammaln

from hrvglucose.stats import (CorrelationSelector, StatisticsError, betainc, paired_t_test, pearson,
                              select_features, t_cdf, t_sf_two_sided)
from hrvglucose.synthetic import make_synthetic_matrix

finite = st.floats(-1e3, 1e3, allow_nan=False)


def t_density(x, df):
    logc = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(logc - (df + 1) / 2 * math.log1p(x * x / df))


# -- special functions ---------------------------------------------------------

@pytest.mark.parametrize("df", range(3, 61))
def test_t_cdf_against_numerical_integration(df):
    for t in (-6.0, -2.5, -1.0, -0.3, 0.0, 0.7, 1.9, 4.0):
        integral, _ = quad(t_density, -np.inf, t, args=(df,), epsabs=1e-14, epsrel=1e-13)
        assert abs(t_cdf(t, df) - integral) < 1e-8


def test_t_sf_edge_cases():
    assert t_sf_two_sided(0.0, 5) == 1.0
    assert t_sf_two_sided(math.inf, 5) == 0.0
    with pytest.raises(ValueError):
        t_sf_two_sided(1.0, 0)


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (2.0, 3.0, 0.9), (10.0, 0.5, 0.99), (30.0, 30.0, 0.5)])
def test_betainc_against_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), rel=1e-12, abs=1e-15)


def test_betainc_domain():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc(-1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        betainc(1.0, 1.0, 1.5)


# -- pearson -----------------------------------------------------------------

def test_pearson_reference_example():
    res = pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 5])
    assert res.r == pytest.approx(0.8, abs=1e-12)
    assert res.p_value == pytest.approx(0.10408803866182799, rel=1e-9)
    assert res.n == 5


@pytest.mark.parametrize("n", [3, 10, 43])
def test_pearson_perfect_linear(n):
    x = np.arange(n, dtype=float)
    res = pearson(x, 2 * x + 1)
    assert res.r == pytest.approx(1.0, abs=1e-15)
    assert res.p_value < 1e-12


def test_pearson_zero_variance():
    with pytest.raises(StatisticsError, match="zero variance"):
        pearson([3, 3, 3, 3], [1, 2, 3, 4])


def test_pearson_too_few_pairs():
    with pytest.raises(StatisticsError):
        pearson([1, 2, np.nan, 4], [1, np.nan, 3, 5])


def test_pearson_pairwise_deletion():
    res = pearson([1, 2, 3, np.nan, 5, 6], [2, 1, 4, 9, 3, 5])
    ref = scipy.stats.pearsonr([1, 2, 3, 5, 6], [2, 1, 4, 3, 5])
    assert res.n == 5
    assert res.r == pytest.approx(ref.statistic, abs=1e-12)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-8)


def test_pearson_matches_scipy_random():
    rng = np.random.default_rng(1)
    for n in (4, 9, 25, 43, 200):
        x = rng.normal(size=n)
        y = 0.3 * x + rng.normal(size=n)
        ref = scipy.stats.pearsonr(x, y)
        res = pearson(x, y)
        assert res.r == pytest.approx(ref.statistic, abs=1e-12)
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
def test_pearson_symmetric(pairs):
    x, y = np.array(pairs).T
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    assert pearson(x, y).r == pytest.approx(pearson(y, x).r, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40),
       st.floats(0.01, 100.0), st.booleans(), st.floats(-100.0, 100.0))
def test_pearson_scale_shift(pairs, a, negate, b):
    x, y = np.array(pairs).T
    assume(np.ptp(x) > 1e-2 and np.ptp(y) > 1e-2)
    a = -a if negate else a
    r = pearson(x, y).r
    assert pearson(a * x + b, y).r == pytest.approx(math.copysign(1.0, a) * r, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(4, 200), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_p_monotone_in_abs_r(n, r1, r2):
    assume(abs(r1 - r2) > 1e-6)
    df = n - 2

    def p_of(r):
        return t_sf_two_sided(r * math.sqrt(df / (1 - r * r)), df)

    lo, hi = sorted((r1, r2))
    assert p_of(hi) <= p_of(lo)


def test_p_monotone_via_pearson():
    x = np.arange(10.0)
    noise = np.sin(np.arange(10.0) * 1.7)
    ps = [pearson(x, x * s + noise).p_value for s in (0.05, 0.1, 0.3, 1.0)]
    rs = [abs(pearson(x, x * s + noise).r) for s in (0.05, 0.1, 0.3, 1.0)]
    assert rs == sorted(rs)
    assert ps == sorted(ps, reverse=True)


# -- paired t-test -----------------------------------------------------------

def test_paired_t_reference_example():
    a = [0.17, 0.16, 0.15, 0.16, 0.165]
    b = [0.13, 0.14, 0.12, 0.13, 0.135]
    t, p = paired_t_test(a, b)
    ref = scipy.stats.ttest_rel(a, b)
    assert t == pytest.approx(9.48683298050513, rel=1e-9)
    assert p == pytest.approx(0.000688909364939613, rel=1e-8)
    assert t == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-8)


def test_paired_t_symmetric_differences():
    t, p = paired_t_test([1, -1, 1, -1], [0, 0, 0, 0])
    assert t == 0.0 and p == 1.0


def test_paired_t_errors():
    with pytest.raises(StatisticsError, match="zero-variance differences"):
        paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(StatisticsError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(StatisticsError):
        paired_t_test([1.0, 2.0], [2.0, 3.0, 4.0])


# -- selection ---------------------------------------------------------------

def test_planted_signal_is_selected():
    m, informative = make_synthetic_matrix(seed=0)
    cols = m.column_dict()
    rep = select_features(cols, m.target, 0.2, 15)
    assert set(informative) <= set(rep.selected)
    # brute-force ranking check
    brute = sorted(cols, key=lambda c: (-abs(np.corrcoef(cols[c], m.target)[0, 1]), c))
    assert [c.feature_name for c in rep.ranked] == brute


def test_fewer_survivors_than_k():
    rng = np.random.default_rng(7)
    y = rng.normal(size=43)
    cols = {f"s{i}": y + rng.normal(0, 0.5, 43) for i in range(3)}
    cols.update({f"z{i}": rng.normal(size=43) for i in range(4)})
    for i in range(4):
        cols[f"z{i}"] = cols[f"z{i}"] - np.polyval(np.polyfit(y, cols[f"z{i}"], 1), y)  # r = 0
    rep = select_features(cols, y, 0.2, 15)
    assert sorted(rep.selected) == ["s0", "s1", "s2"]


def test_mirrored_tie_break():
    rng = np.random.default_rng(3)
    y = rng.normal(size=30)
    x = y + rng.normal(0, 0.3, 30)
    rep = select_features({"b_neg": -x, "a_pos": x}, y)
    assert abs(rep.ranked[0].r) == abs(rep.ranked[1].r)
    assert rep.selected == ["a_pos", "b_neg"]


def test_empty_selection_warns():
    x = np.array([1.0, -1.0, 1.0, -1.0, 0.0])
    y = np.array([1.0, 1.0, -1.0, -1.0, 0.0])
    with pytest.warns(RuntimeWarning, match="no feature"):
        rep = select_features({"x": x}, y)
    assert rep.selected == []


def test_constant_column_skipped():
    y = np.arange(10.0)
    rep = select_features({"c": np.ones(10), "x": y ** 2}, y)
    assert rep.skipped == ["c"] and rep.selected == ["x"]


def test_selection_invariants_and_rows():
    m, _ = make_synthetic_matrix(seed=4)
    rep = select_features(m.column_dict(), m.target, 0.2, 3)
    assert len(rep.selected) <= 3
    by_name = {c.feature_name: c for c in rep.ranked}
    assert all(by_name[s].p_value < 0.2 for s in rep.selected)
    rows = rep.to_rows()
    assert [r["rank"] for r in rows] == list(range(1, len(rows) + 1))
    assert sum(r["selected"] for r in rows) == len(rep.selected)


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(20))), st.integers(0, 30))
def test_selection_permutation_invariant(perm, seed):
    m, _ = make_synthetic_matrix(seed=seed)
    cols = m.column_dict()
    names = list(cols)
    shuffled = {names[i]: cols[names[i]] for i in perm}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = select_features(cols, m.target)
        b = select_features(shuffled, m.target)
    assert a.selected == b.selected
    assert a.ranked == b.ranked


def test_correlation_selector_estimator():
    m, informative = make_synthetic_matrix(seed=0)
    sel = CorrelationSelector(p_threshold=0.2, k=15).fit(m.data, m.target)
    chosen = list(sel.get_feature_names_out())
    assert set(informative) <= set(chosen)
    assert sel.transform(m.data).shape == (43, len(chosen))
    assert sel.get_params() == {"p_threshold": 0.2, "k": 15}

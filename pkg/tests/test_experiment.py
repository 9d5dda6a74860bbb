import math

import numpy as np
import pandas as pd
import pytest

from hrvglucose.experiment import (ABLATION_CONFIGS, CvReport, ExperimentError, FoldResult,
                                   QuantileStratifiedKFold, ablation_pool, compare_models, run_ablation, run_cv,
                                   sleep_stage_analysis, stratified_kfold)
from hrvglucose.features import FeatureMatrix
from hrvglucose.model import LeastSquaresRegressor, Metrics
from hrvglucose.synthetic import make_synthetic_matrix


def _fake_report(r2s):
    folds = [FoldResult(i, np.array([0]), np.array([1, 2]), [], None, {}, np.zeros(2),
                        Metrics(r2, 0.1, math.nan, math.nan, 2)) for i, r2 in enumerate(r2s)]
    return CvReport(folds, np.zeros(2), np.zeros(2), folds[0].metrics, {}, "global", 42, len(r2s))


# -- fold plans --------------------------------------------------------------

def test_fold_sizes_43_5():
    plan = stratified_kfold(np.random.default_rng(0).normal(size=43), 5, 42)
    assert sorted(plan.fold_sizes, reverse=True) == [9, 9, 9, 8, 8]
    assert plan.fold_sizes == [9, 9, 9, 8, 8]


@pytest.mark.parametrize("n,k", [(10, 2), (11, 3), (43, 5), (100, 7), (5, 5)])
def test_fold_sizes_balanced(n, k):
    plan = stratified_kfold(np.arange(n, dtype=float)[::-1], k, 1)
    assert max(plan.fold_sizes) - min(plan.fold_sizes) <= 1
    assert sum(plan.fold_sizes) == n


def test_plan_deterministic_and_seed_sensitive():
    y = np.random.default_rng(3).normal(size=43)
    assert stratified_kfold(y, 5, 42) == stratified_kfold(y, 5, 42)
    assert stratified_kfold(y, 5, 42) != stratified_kfold(y, 5, 7)


def test_plan_errors():
    with pytest.raises(ExperimentError):
        stratified_kfold(np.arange(3.0), 5)
    with pytest.raises(ExperimentError):
        stratified_kfold(np.arange(3.0), 1)


def test_stratification_simulation():
    rng = np.random.default_rng(2025)
    for trial in range(100):
        y = rng.lognormal(1.7, 0.2, 43)
        plan = stratified_kfold(y, 5, trial)
        sd = y.std(ddof=1)
        for f in range(5):
            assert abs(y[plan.test_indices(f)].mean() - y.mean()) <= 0.5 * sd


def test_sklearn_splitter():
    y = np.random.default_rng(1).normal(size=43)
    cv = QuantileStratifiedKFold(5, 42)
    plan = stratified_kfold(y, 5, 42)
    for (tr, te), f in zip(cv.split(np.zeros((43, 1)), y), range(5)):
        np.testing.assert_array_equal(te, plan.test_indices(f))
        np.testing.assert_array_equal(tr, plan.train_indices(f))
    assert cv.get_n_splits() == 5


# -- run_cv ------------------------------------------------------------------

def test_perfect_feature():
    rng = np.random.default_rng(0)
    y = rng.normal(1.7, 0.2, 43)
    data = pd.DataFrame({"hrv_ds_mean_rr": y, "noise": rng.normal(size=43)})
    m = FeatureMatrix(data, y)
    rep = run_cv(m, stratified_kfold(y, 5, 42))
    assert rep.r2[0] > 0.99


def test_synthetic_r2_in_band():
    m, informative = make_synthetic_matrix(seed=0)
    rep = run_cv(m, stratified_kfold(m.target, 5, 42), "global")
    assert 0.2 <= rep.r2[0] <= 0.6
    assert set(informative) <= set(rep.global_selection.selected)


def test_summary_recomputes_from_folds():
    m, _ = make_synthetic_matrix(seed=1)
    rep = run_cv(m, stratified_kfold(m.target, 5, 42), "per_fold")
    s = rep.summary()
    r2 = np.array([f.r2 for f in rep.per_fold])
    mae = np.array([f.mae for f in rep.per_fold])
    assert len(rep.per_fold) == 5
    assert s["r2_mean"] == pytest.approx(np.mean(r2), abs=1e-12)
    assert s["r2_sd"] == pytest.approx(np.std(r2, ddof=1), abs=1e-12)
    assert s["mae_mean"] == pytest.approx(np.mean(mae), abs=1e-12)
    assert s["mae_sd"] == pytest.approx(np.std(mae, ddof=1), abs=1e-12)
    assert s["r2_cv_percent"] == pytest.approx(np.std(r2, ddof=1) / np.mean(r2) * 100, abs=1e-9)


def test_pooled_predictions_cover_every_row():
    m, _ = make_synthetic_matrix(seed=2)
    plan = stratified_kfold(m.target, 5, 42)
    rep = run_cv(m, plan)
    for fr in rep.folds:
        np.testing.assert_array_equal(rep.predictions[fr.test_index], fr.predictions)
    assert set(rep.tolerance) == {1.0, 1.5, 2.0}


def test_per_fold_mode_ignores_test_rows():
    m, _ = make_synthetic_matrix(seed=3)
    plan = stratified_kfold(m.target, 5, 42)
    base = run_cv(m, plan, "per_fold")
    test = plan.test_indices(2)
    mutated_data = m.data.copy()
    mutated_data.iloc[test] = np.random.default_rng(9).normal(0, 50, (test.size, m.data.shape[1]))
    mutated_target = m.target.copy()
    mutated_target[test] = mutated_target[test][::-1] + 1.0
    m2 = FeatureMatrix(mutated_data, mutated_target)
    rep = run_cv(m2, plan, "per_fold")
    a, b = base.folds[2], rep.folds[2]
    assert a.selected == b.selected
    assert a.train_means == b.train_means
    np.testing.assert_array_equal(a.model.weights, b.model.weights)
    np.testing.assert_array_equal(a.model.x_offset, b.model.x_offset)
    np.testing.assert_array_equal(a.model.x_scale, b.model.x_scale)


def test_global_mode_does_see_test_rows():
    # the leakage per_fold mode guards against
    m, _ = make_synthetic_matrix(seed=3)
    plan = stratified_kfold(m.target, 5, 42)
    test = plan.test_indices(2)
    target = m.target.copy()
    target[test] = np.random.default_rng(1).normal(1.7, 2.0, test.size)
    a = run_cv(m, plan, "global").global_selection
    b = run_cv(FeatureMatrix(m.data, target), plan, "global").global_selection
    assert [c.r for c in a.ranked] != [c.r for c in b.ranked]


def test_missing_values_filled_from_training_rows():
    m, _ = make_synthetic_matrix(seed=0)
    data = m.data.copy()
    data.iloc[[0, 5, 9], 0] = np.nan
    rep = run_cv(FeatureMatrix(data, m.target), stratified_kfold(m.target, 5, 42), "per_fold")
    for fr in rep.folds:
        col = data.columns[0]
        if col in fr.train_means:
            assert fr.train_means[col] == pytest.approx(np.nanmean(data[col].to_numpy()[fr.train_index]))
    assert np.all(np.isfinite(rep.predictions))


def test_empty_selection_raises_or_falls_back():
    rng = np.random.default_rng(0)
    y = rng.normal(size=20)
    x = np.sin(np.arange(20) * 2.0)
    x = x - np.polyval(np.polyfit(y, x, 1), y)  # exactly uncorrelated with y
    m = FeatureMatrix(pd.DataFrame({"x": x}), y)
    plan = stratified_kfold(y, 4, 42)
    with pytest.raises(ExperimentError, match="zero features"):
        run_cv(m, plan, "global")
    rep = run_cv(m, plan, "global", allow_empty_selection=True)
    for fr in rep.folds:
        np.testing.assert_allclose(fr.predictions, y[fr.train_index].mean())


def test_run_cv_errors():
    m, _ = make_synthetic_matrix(n=12, seed=0)
    with pytest.raises(ExperimentError):
        run_cv(m, stratified_kfold(m.target, 5, 42), "sideways")
    with pytest.raises(ExperimentError, match="fewer than 2"):
        run_cv(m, stratified_kfold(m.target, 12, 42))
    with pytest.raises(ExperimentError):
        run_cv(m, stratified_kfold(m.target[:10], 5, 42))


def test_parallel_folds_identical():
    m, _ = make_synthetic_matrix(seed=5)
    plan = stratified_kfold(m.target, 5, 42)
    a = run_cv(m, plan, "per_fold", n_jobs=1)
    b = run_cv(m, plan, "per_fold", n_jobs=4)
    np.testing.assert_array_equal(a.predictions, b.predictions)
    assert a.summary() == b.summary()


def test_alternative_estimator():
    m, _ = make_synthetic_matrix(seed=0)
    plan = stratified_kfold(m.target, 5, 42)
    rep = run_cv(m, plan, estimator=LeastSquaresRegressor())
    assert all(fr.model is None for fr in rep.folds)
    assert np.isfinite(rep.r2[0])


# -- ablation ----------------------------------------------------------------

def _ablation_matrix():
    m, _ = make_synthetic_matrix(seed=0)
    data = m.data.copy()
    data["hrv_ds_mean_rr_age_normalized"] = data["hrv_ds_mean_rr"] * 1.3
    data["age"] = np.linspace(30, 70, len(data))
    data["psqi_age"] = data["age"] * 2
    return FeatureMatrix(data, m.target)


def test_ablation_pools():
    m = _ablation_matrix()
    full = ablation_pool(m, "Full")
    assert full == m.columns
    assert "hrv_ds_mean_rr_age_normalized" not in ablation_pool(m, "NoAgeNorm")
    assert "hrv_ds_mean_rr" in ablation_pool(m, "NoAgeNorm")
    no_hrv = ablation_pool(m, "NoSleepHrv")
    assert not any(c.startswith("hrv_") for c in no_hrv) and "age" in no_hrv
    assert all(c.startswith("hrv_") for c in ablation_pool(m, "EcgOnly"))
    clinical = ablation_pool(m, "ClinicalOnly")
    assert clinical == [f"clin_{j:02d}" for j in range(15)]
    with pytest.raises(ExperimentError):
        ablation_pool(m, "Everything")


def test_ablation_rows_order_and_full_identity():
    m = _ablation_matrix()
    plan = stratified_kfold(m.target, 5, 42)
    ab = run_ablation(m, plan)
    assert ab.configs == list(ABLATION_CONFIGS)
    full = run_cv(m, plan, "global")
    assert ab["Full"].report.r2 == full.r2
    assert ab["Full"].report.mae == full.mae
    np.testing.assert_array_equal(ab["Full"].report.predictions, full.predictions)
    assert ab["Full"].delta_r2 == 0.0
    for row in ab.rows:
        assert row.delta_r2 == row.report.r2[0] - full.r2[0] or row.config == "Full"
    assert ab["ClinicalOnly"].pool_size == 15


def test_ablation_subset():
    m = _ablation_matrix()
    ab = run_ablation(m, stratified_kfold(m.target, 5, 42), configs=("ClinicalOnly", "EcgOnly"))
    assert ab.configs == ["EcgOnly", "ClinicalOnly"]
    with pytest.raises(ExperimentError):
        run_ablation(m, stratified_kfold(m.target, 5, 42), configs=("Bogus",))


def test_ablation_no_signal_clinical():
    m, _ = make_synthetic_matrix(seed=0)
    ab = run_ablation(m, stratified_kfold(m.target, 5, 42), selection_mode="per_fold",
                      configs=("Full", "ClinicalOnly"))
    assert ab["ClinicalOnly"].report.r2[0] <= 0.0


def test_empty_pool_errors():
    m, _ = make_synthetic_matrix(seed=0)
    hrv_only = m.restrict([c for c in m.columns if c.startswith("hrv_")])
    with pytest.raises(ExperimentError, match="empty feature pool"):
        run_ablation(hrv_only, stratified_kfold(m.target, 5, 42), configs=("ClinicalOnly",))


# -- sleep stages ------------------------------------------------------------

def test_sleep_stage_summary():
    m = _ablation_matrix()
    res = sleep_stage_analysis(m)
    ds = [c for c in m.columns if c.startswith("hrv_ds_")]
    r = np.abs([np.corrcoef(m.data[c], m.target)[0, 1] for c in ds])
    assert res["DS"].n_columns == len(ds)
    assert res["DS"].mean_abs_r == pytest.approx(r.mean(), abs=1e-12)
    assert res["DS"].sd_abs_r == pytest.approx(r.std(ddof=1), abs=1e-12)
    assert (res["DS"].min_abs_r, res["DS"].max_abs_r) == pytest.approx((r.min(), r.max()), abs=1e-12)


def test_single_column_stage():
    m = _ablation_matrix()
    res = sleep_stage_analysis(m)
    rem = [c for c in m.columns if c.startswith("hrv_rem_")]
    assert res["REM"].n_columns == len(rem) == 2
    one = sleep_stage_analysis(m.restrict(["hrv_rs_sdnn", "hrv_ds_mean_rr", "hrv_rem_rmssd"]))
    assert not one["RS"].sd_defined and math.isnan(one["RS"].sd_abs_r)
    assert one["RS"].min_abs_r == one["RS"].max_abs_r


def test_stage_without_columns():
    m, _ = make_synthetic_matrix(seed=0)
    with pytest.raises(ExperimentError):
        sleep_stage_analysis(m.restrict(["hrv_ds_mean_rr"]))


def test_noise_stage_means_small():
    rng = np.random.default_rng(77)
    hits = 0
    for _ in range(100):
        y = rng.normal(size=43)
        data = pd.DataFrame(rng.normal(size=(43, 6)),
                            columns=[f"hrv_rem_{m}" for m in ("mean_rr", "rmssd", "sdnn", "pnn50", "rr_range",
                                                               "mean_rr_age_normalized")])
        hits += sleep_stage_analysis(FeatureMatrix(data, y), stages=("REM",))["REM"].mean_abs_r < 0.3
    assert hits >= 95


# -- model comparison --------------------------------------------------------

def test_compare_identical_reports():
    rep = _fake_report([0.1, 0.2, 0.15, 0.12, 0.18])
    c = compare_models(rep, rep)
    assert c.indistinguishable and math.isnan(c.p)


def test_compare_uplift():
    base = np.array([0.130, 0.125, 0.140, 0.135, 0.128])
    uplift = 0.03 + np.array([0.004, -0.005, 0.006, -0.003, -0.002])
    assert np.std(uplift, ddof=1) == pytest.approx(0.005, abs=1e-3)
    c = compare_models(_fake_report(base + uplift), _fake_report(base))
    assert c.p < 0.01
    assert c.mean_difference == pytest.approx(0.03, abs=1e-12)


def test_compare_fold_mismatch():
    with pytest.raises(ExperimentError):
        compare_models(_fake_report([0.1, 0.2]), _fake_report([0.1, 0.2, 0.3]))

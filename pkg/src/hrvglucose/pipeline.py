"""End-to-end orchestration: per-subject extraction and report bundles."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, ingest
from . import signal as sig
from .config import RunConfig
from .experiment import (ABLATION_CONFIGS, AblationReport, CvReport, compare_models, run_ablation,
                         run_cv, sleep_stage_analysis, stratified_kfold)
from .features import FeatureMatrix, build_feature_matrix
from .model import BayesianRidgeRegressor, FixedRidgeRegressor, LeastSquaresRegressor
from .records import STAGES, SubjectRecord
from .stats import select_features

logger = logging.getLogger(__name__)


class SubjectError(RuntimeError):
    """Extraction failure attributed to one subject."""

    def __init__(self, subject_id: str, message: str):
        super().__init__(f"subject {subject_id}: {message}")
        self.subject_id = subject_id


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def _signal_path(subject: SubjectRecord, cfg: RunConfig, table_dir: Path) -> Path:
    ref = ingest.resolve_signal_ref(subject, table_dir)
    if ref is not None:
        return ref
    signal_dir = cfg.path(cfg.raw["data"]["signal_dir"])
    if signal_dir is None:
        raise SubjectError(subject.subject_id, "no signal_ref in the clinical table and no data.signal_dir")
    return signal_dir / f"{subject.subject_id}.txt"


def extract_subject(subject: SubjectRecord, cfg: RunConfig, table_dir: Path):
    """Clean and stage-segment one subject's RR data.

    Returns ``(stage_series, qc_row)``.
    """
    sid = subject.subject_id
    path = _signal_path(subject, cfg, table_dir)
    qc = {"subject_id": sid, "signal": cfg.raw["data"]["signal"]}
    try:
        if cfg.raw["data"]["signal"] == "ecg":
            ecg = ingest.load_ecg(path, cfg.fs)
            report = sig.validate_amplitude(ecg)
            qc.update(max_abs_mv=report.max_abs_mv, amplitude_ok=report.passed, duration_s=report.duration_s)
            if not report.passed:
                raise sig.SignalError(f"amplitude {report.max_abs_mv:.3g} mV outside ±{report.limit_mv:g} mV")
            peaks = sig.detect_r_peaks(ecg)
            qc["n_peaks"] = int(peaks.size)
            rr = sig.peaks_to_rr(peaks, ecg.fs)
        else:
            rr = ingest.load_rr_series(path)
        qc["n_intervals"] = len(rr)
        qc["n_out_of_range"] = int(rr.out_of_range.sum())
        cleaned = sig.remove_artifacts(rr, cfg.artifact_window)
        qc["n_artifacts_removed"] = len(rr) - len(cleaned)
        ann = None
        ann_dir = cfg.path(cfg.raw["data"]["annotations_dir"])
        if ann_dir is not None:
            ann_path = ann_dir / f"{sid}.csv"
            if ann_path.exists():
                ann = ingest.load_stage_annotation(ann_path)
            elif cleaned.stages is None:
                raise ingest.IngestError(f"annotation file not found: {ann_path}")
        stages = sig.segment_by_stage(cleaned, ann)
    except (ValueError, OSError) as exc:
        raise SubjectError(sid, str(exc)) from exc
    staged = 0
    for stage in STAGES:
        qc[f"n_{stage.lower()}"] = len(stages[stage])
        staged += len(stages[stage])
    qc["stage_coverage"] = staged / len(cleaned) if len(cleaned) else 0.0
    return stages, qc


def extract_features(cfg: RunConfig, n_jobs: int = 1) -> tuple[FeatureMatrix, pd.DataFrame]:
    clinical = cfg.path(cfg.raw["data"]["clinical"])
    if clinical is None:
        raise ingest.IngestError("data.clinical is not set")
    cohort = ingest.load_clinical_table(clinical)

    def job(subject):
        return extract_subject(subject, cfg, clinical.parent)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(job, cohort.subjects))
    else:
        results = [job(s) for s in cohort.subjects]
    stage_series = {s.subject_id: r[0] for s, r in zip(cohort, results)}
    qc = pd.DataFrame([r[1] for r in results])
    matrix = build_feature_matrix(cohort, stage_series, cfg.age_norm, cfg.feature_options)
    return matrix, qc


# ---------------------------------------------------------------------------
# report writing
# ---------------------------------------------------------------------------

def _provenance(cfg: RunConfig) -> dict:
    resolved = cfg.resolved()
    resolved.pop("output", None)
    blob = json.dumps(resolved, sort_keys=True).encode()
    return {"version": __version__, "seed": cfg.seed, "config_sha256": hashlib.sha256(blob).hexdigest(),
            "config": resolved}


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def provenance_header(provenance: dict) -> str:
    """Two ``#`` comment lines: version/seed/hash, then the resolved config as JSON."""
    return (f"# hrvglucose {provenance['version']} seed={provenance['seed']} "
            f"config_sha256={provenance['config_sha256']}\n"
            f"# config={json.dumps(_clean(provenance['config']), sort_keys=True)}\n")


def write_table(path: Path, rows, provenance: dict, columns=None) -> None:
    """Write a CSV table preceded by the provenance comment lines."""
    df = pd.DataFrame(rows, columns=columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(provenance_header(provenance))
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


@dataclass
class RunResult:
    matrix: FeatureMatrix
    cv: CvReport
    cv_alternate: CvReport
    ablation: AblationReport
    stages: dict
    files: list[Path]


def _cv_fold_rows(rep: CvReport):
    return [{"fold": fr.fold, "n_train": fr.train_index.size, "n_test": fr.test_index.size,
             "n_features": len(fr.selected), **{k: v for k, v in fr.metrics.to_dict().items() if k != "n"}}
            for fr in rep.folds]


def cmd_extract_features(cfg: RunConfig, output: Path | None = None, n_jobs: int = 1) -> list[Path]:
    out = Path(output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg)
    matrix, qc = extract_features(cfg, n_jobs)
    files = [out / "features.csv", out / "qc.csv"]
    matrix.to_csv(files[0], header=provenance_header(prov))
    write_table(files[1], qc, prov)
    return files


def _load_or_extract(cfg: RunConfig, out: Path, n_jobs: int, prov: dict, files: list) -> FeatureMatrix:
    features = cfg.path(cfg.raw["data"]["features"])
    if features is not None:
        return FeatureMatrix.from_csv(features)
    matrix, qc = extract_features(cfg, n_jobs)
    matrix.to_csv(out / "features.csv", header=provenance_header(prov))
    write_table(out / "qc.csv", qc, prov)
    files.extend([out / "features.csv", out / "qc.csv"])
    return matrix


def _ablation_rows(ab: AblationReport):
    return [row.to_dict() for row in ab.rows]


def cmd_ablate(cfg: RunConfig, output: Path | None = None, n_jobs: int = 1,
               configs=ABLATION_CONFIGS) -> list[Path]:
    out = Path(output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg)
    files: list[Path] = []
    matrix = _load_or_extract(cfg, out, n_jobs, prov, files)
    plan = stratified_kfold(matrix.target, cfg.k_folds, cfg.seed)
    ab = run_ablation(matrix, plan, cfg.ridge, cfg.selection_mode, cfg.p_threshold, cfg.k_features,
                      configs, n_jobs)
    write_table(out / "ablation.csv", _ablation_rows(ab), prov)
    write_json(out / "ablation_summary.json", {"provenance": prov, "fold_sizes": plan.fold_sizes,
                                               "ablation": _ablation_rows(ab)})
    files += [out / "ablation.csv", out / "ablation_summary.json"]
    return files


BASELINES = (("LeastSquares", LeastSquaresRegressor()), ("Ridge(penalty=1)", FixedRidgeRegressor(1.0)))


def _model_row(name: str, rep: CvReport, reference: CvReport | None) -> dict:
    r2, r2_sd = rep.r2
    mae, mae_sd = rep.mae
    row = {"model": name, "r2": r2, "r2_sd": r2_sd, "mae": mae, "mae_sd": mae_sd,
           "t_vs_bayesian_ridge": math.nan, "p_vs_bayesian_ridge": math.nan}
    if reference is not None:
        cmp = compare_models(reference, rep)
        row.update(t_vs_bayesian_ridge=cmp.t, p_vs_bayesian_ridge=cmp.p)
    return row


def cmd_run(cfg: RunConfig, output: Path | None = None, n_jobs: int = 1) -> RunResult:
    """Full pipeline: selection table, CV (both modes), ablation, stage table, tolerance, final model."""
    out = Path(output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg)
    files: list[Path] = []
    matrix = _load_or_extract(cfg, out, n_jobs, prov, files)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        selection = select_features(matrix.column_dict(), matrix.target, cfg.p_threshold, cfg.k_features)
    write_table(out / "selection.csv", selection.to_rows(), prov,
                columns=["rank", "feature", "r", "p", "n", "selected"])

    plan = stratified_kfold(matrix.target, cfg.k_folds, cfg.seed)
    mode = cfg.selection_mode
    other = "per_fold" if mode == "global" else "global"
    cv = run_cv(matrix, plan, mode, cfg.ridge, cfg.p_threshold, cfg.k_features, n_jobs=n_jobs,
                allow_empty_selection=True)
    cv_alt = run_cv(matrix, plan, other, cfg.ridge, cfg.p_threshold, cfg.k_features, n_jobs=n_jobs,
                    allow_empty_selection=True)
    write_table(out / "cv_folds.csv", _cv_fold_rows(cv), prov)
    fold_of = plan.assignments
    write_table(out / "cv_predictions.csv",
                {"subject_id": matrix.subject_ids, "fold": fold_of, "y_true": matrix.target,
                 "y_pred": cv.predictions}, prov)
    write_table(out / "tolerance.csv",
                [{"band_mmol_L": b, "fraction": f} for b, f in cv.tolerance.items()], prov)

    ab = run_ablation(matrix, plan, cfg.ridge, mode, cfg.p_threshold, cfg.k_features, n_jobs=n_jobs)
    write_table(out / "ablation.csv", _ablation_rows(ab), prov)

    stage_rows = []
    try:
        stages = sleep_stage_analysis(matrix)
        stage_rows = [s.to_dict() for s in stages.values()]
    except ValueError as exc:
        logger.warning("sleep-stage analysis skipped: %s", exc)
        stages = {}
    write_table(out / "sleep_stages.csv", stage_rows, prov,
                columns=["stage", "n_columns", "mean_abs_r", "sd_abs_r", "min_abs_r", "max_abs_r", "sd_defined"])

    comparison = None
    if "NoAgeNorm" in ab.configs and "Full" in ab.configs:
        comparison = compare_models(ab["Full"].report, ab["NoAgeNorm"].report).to_dict()

    model_rows = [_model_row("BayesianRidge", cv, None)]
    for name, est in BASELINES:
        rep = run_cv(matrix, plan, mode, cfg.ridge, cfg.p_threshold, cfg.k_features, n_jobs=n_jobs,
                     allow_empty_selection=True, estimator=est)
        model_rows.append(_model_row(name, rep, cv))
    write_table(out / "models.csv", model_rows, prov)

    final_cols = selection.selected
    model_file = out / "model_fit.json"
    if final_cols:
        X = matrix.data[final_cols]
        X = X.fillna(X.mean())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est = BayesianRidgeRegressor(**{k: getattr(cfg.ridge, k) for k in
                                            ("alpha_1", "alpha_2", "lambda_1", "lambda_2", "max_iter", "tol")})
            est.fit(X, matrix.target)
        est.fit_.save(model_file)
    else:
        write_json(model_file, {"format": "hrvglucose.bayesian-ridge", "version": 1, "empty": True})

    write_json(out / "summary.json", {
        "provenance": prov,
        "n_subjects": int(matrix.target.size),
        "n_candidate_features": len(matrix.columns),
        "fold_sizes": plan.fold_sizes,
        "selected_features": selection.selected,
        "cv": cv.summary(),
        "cv_alternate_mode": cv_alt.summary(),
        "ablation": _ablation_rows(ab),
        "full_vs_no_age_norm": comparison,
        "sleep_stages": stage_rows,
        "models": model_rows,
    })
    files += [out / n for n in ("selection.csv", "cv_folds.csv", "cv_predictions.csv", "tolerance.csv",
                                "ablation.csv", "sleep_stages.csv", "models.csv", "summary.json")]
    files.append(model_file)
    return RunResult(matrix, cv, cv_alt, ab, stages, files)

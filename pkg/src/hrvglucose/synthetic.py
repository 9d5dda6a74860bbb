"""Synthetic data with known ground truth: ECG template trains, feature
matrices with planted signal, and a small on-disk cohort.

Run ``python -m hrvglucose.synthetic OUTDIR`` to regenerate the repository
fixture.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .features import FeatureMatrix, hrv_column
from .ingest import write_clinical_table, write_rr_series, write_stage_annotation
from .records import STAGES, Cohort, RrSeries, StageAnnotation, SubjectRecord


def qrs_template(fs: float = 250.0, length_s: float = 1.0) -> np.ndarray:
    """One PQRST beat built from Gaussian bumps; the R apex sits at 0.4 s."""
    t = np.arange(int(round(length_s * fs))) / fs

    def bump(mu, sigma, amp):
        return amp * np.exp(-0.5 * ((t - mu) / sigma) ** 2)

    beat = (bump(0.20, 0.025, 0.15) + bump(0.39, 0.008, -0.10) + bump(0.40, 0.010, 1.20)
            + bump(0.41, 0.008, -0.25) + bump(0.65, 0.040, 0.30))
    beat[0] = 0.0
    return beat


def template_train(n_beats: int, period: int = 250, fs: float = 250.0) -> np.ndarray:
    """Tile ``qrs_template`` every ``period`` samples."""
    beat = qrs_template(fs, period / fs)
    return np.tile(beat, n_beats)


def ecg_from_rr(rr_ms, fs: float = 250.0, noise_mv: float = 0.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Place one template per beat at the given RR spacing.

    Returns the signal and the R-apex sample indices.
    """
    beat = qrs_template(fs, 0.6)
    apex = int(round(0.4 * fs))
    starts = np.concatenate(([0], np.cumsum(np.round(np.asarray(rr_ms) * fs / 1000.0).astype(int))))
    x = np.zeros(int(starts[-1]) + beat.size)
    for s in starts:
        x[s:s + beat.size] += beat
    if noise_mv > 0:
        x += np.random.default_rng(seed).normal(0.0, noise_mv, x.size)
    return x, starts + apex


def make_synthetic_matrix(n: int = 43, n_informative: int = 5, n_noise: int = 15,
                          oracle_r2: float = 0.55, shared: float = 0.5,
                          seed: int = 0) -> tuple[FeatureMatrix, list[str]]:
    """Feature matrix with ``n_informative`` HRV-named columns carrying linear signal.

    Informative columns share a common factor (pairwise correlation
    ``shared``), as HRV metrics of one night do. The remaining ``n_noise``
    columns are clinical-named pure noise. Target noise is scaled so the true
    linear model explains ``oracle_r2`` of the target variance. Returns the
    matrix and the informative names.
    """
    rng = np.random.default_rng(seed)
    names_inf = [hrv_column(STAGES[i % 3], m) for i, m in
                 enumerate(["mean_rr", "rmssd", "sdnn", "pnn50", "rr_range",
                            "mean_rr", "rmssd", "sdnn"][:n_informative])]
    if len(set(names_inf)) != n_informative:
        raise ValueError("n_informative too large for the naming scheme")
    names_noise = [f"clin_{j:02d}" for j in range(n_noise)]
    factor = rng.normal(size=(n, 1))
    X_inf = math.sqrt(shared) * factor + math.sqrt(1.0 - shared) * rng.normal(size=(n, n_informative))
    X_noise = rng.normal(size=(n, n_noise))
    signal = X_inf.sum(axis=1)
    signal_var = n_informative + n_informative * (n_informative - 1) * shared
    noise_sd = math.sqrt(signal_var * (1 - oracle_r2) / oracle_r2)
    z = (signal + rng.normal(0.0, noise_sd, n)) / math.sqrt(signal_var / oracle_r2)
    target = math.log(5.5) + 0.2 * z
    data = pd.DataFrame(np.column_stack([X_inf, X_noise]), columns=names_inf + names_noise,
                        index=pd.Index([f"S{i:03d}" for i in range(n)], name="subject_id"))
    return FeatureMatrix(data, target), names_inf


# ---------------------------------------------------------------------------
# on-disk cohort
# ---------------------------------------------------------------------------

_STAGE_BASE_RR = {"DS": 1000.0, "REM": 920.0, "RS": 960.0}
_STAGE_SD = {"DS": 30.0, "REM": 55.0, "RS": 40.0}


def _night(rng, age, latent, block_s=240.0, cycles=2):
    """RR series and stage annotation for one synthetic night.

    Stage mean RR scales with the age factor (as raw HRV declines with age)
    and with a subject latent shared with glucose.
    """
    intervals, labels, ann = [], [], []
    t = 0.0
    age_factor = age / 65.0 + 0.1
    for _ in range(cycles):
        for stage in STAGES:
            mean = _STAGE_BASE_RR[stage] * age_factor * (1.0 + 0.06 * latent) * rng.normal(1.0, 0.015)
            start = t
            prev = 0.0
            while t - start < block_s:
                prev = 0.6 * prev + rng.normal(0.0, _STAGE_SD[stage])
                value = max(300.0, mean + prev)
                if rng.random() < 0.004:
                    value *= 2.2  # missed beat
                intervals.append(round(value, 1))
                labels.append(stage)
                t += value / 1000.0
            ann.append((start, t, stage))
    return np.asarray(intervals), labels, StageAnnotation(tuple(ann))


def make_synthetic_cohort(n: int = 43, seed: int = 42):
    """Cohort with RR nights whose age-normalized mean RR tracks log-glucose.

    Returns ``(cohort, rr_by_subject, annotation_by_subject)``.
    """
    rng = np.random.default_rng(seed)
    subjects, rr, ann = [], {}, {}
    for i in range(n):
        sid = f"S{i + 1:02d}"
        age = float(round(rng.uniform(25, 80), 1))
        latent = rng.normal()
        log_g = math.log(5.6) + 0.16 * latent + rng.normal(0.0, 0.14)
        glucose = float(round(math.exp(log_g), 2))
        clinical = {
            "dbp": float(round(78 + 6 * latent + rng.normal(0, 7), 1)),
            "sbp": float(round(124 + rng.normal(0, 12), 1)),
            "bmi": float(round(26 + rng.normal(0, 3.5), 1)),
            "psqi": float(round(min(21, max(0, 7 + rng.normal(0, 3))))),
            "hdl": float(round(1.3 + rng.normal(0, 0.25), 2)),
            "ldl": float(round(3.0 + rng.normal(0, 0.6), 2)),
            "triglycerides": float(round(1.5 + abs(rng.normal(0, 0.5)), 2)),
            "heart_rate_rest": float(round(66 + rng.normal(0, 7))),
            "waist_cm": float(round(90 + rng.normal(0, 9), 1)),
            "creatinine": float(round(80 + rng.normal(0, 12))),
            "ahi": float(round(abs(rng.normal(5, 4)), 1)),
            "sleep_efficiency": float(round(min(99, 85 + rng.normal(0, 5)), 1)),
        }
        intervals, _, annotation = _night(rng, age, latent)
        subjects.append(SubjectRecord(sid, age, glucose, clinical, f"rr/{sid}.txt"))
        rr[sid] = RrSeries.from_intervals(intervals)
        ann[sid] = annotation
    return Cohort(tuple(subjects)), rr, ann


def default_config() -> dict:
    return {
        "data": {
            "clinical": "clinical.csv",
            "signal": "rr",
            "annotations_dir": "annotations",
        },
        "sampling_rate_hz": 250,
        "artifact_window": 51,
        "age_norm": {"reference_age": 65.0, "epsilon": 0.1},
        "features": {"age_normalization": True, "psqi_age": True, "psqi_column": "psqi"},
        "selection": {"p_threshold": 0.2, "k": 15},
        "ridge": {"alpha_1": 1.0e-6, "alpha_2": 1.0e-6, "lambda_1": 1.0e-6, "lambda_2": 1.0e-6,
                  "max_iter": 300, "tol": 1.0e-3},
        "cv": {"k_folds": 5, "seed": 42, "selection_mode": "global"},
        "output": "out",
    }


def write_fixture(outdir, n: int = 43, seed: int = 42) -> Path:
    """Write clinical table, RR files, annotations and ``config.yaml`` under ``outdir``."""
    outdir = Path(outdir)
    (outdir / "rr").mkdir(parents=True, exist_ok=True)
    (outdir / "annotations").mkdir(parents=True, exist_ok=True)
    cohort, rr, ann = make_synthetic_cohort(n, seed)
    write_clinical_table(cohort, outdir / "clinical.csv")
    for sid in cohort.subject_ids:
        write_rr_series(rr[sid], outdir / "rr" / f"{sid}.txt")
        write_stage_annotation(ann[sid], outdir / "annotations" / f"{sid}.csv")
    cfg_path = outdir / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(default_config(), sort_keys=False), encoding="utf-8")
    return cfg_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("outdir")
    parser.add_argument("--subjects", type=int, default=43)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args(argv)
    print(write_fixture(args.outdir, args.subjects, args.seed))


if __name__ == "__main__":
    main()

"""Readers and writers for the cohort's on-disk formats.

Clinical table
    Delimiter-separated text with a header row. ``subject_id``, ``age`` and
    ``glucose_mmol_L`` are mandatory; every other numeric column is carried
    through under its header name. An optional ``signal_ref`` column names a
    per-subject RR or ECG file (relative paths resolve against the table).
RR file
    One interval (ms) per line, optionally followed by a stage token
    ``DS|REM|RS`` separated by comma, tab, semicolon or whitespace.
ECG file
    One sample (mV) per line.
Stage annotation
    Header ``start_s,end_s,stage`` then one row per scored epoch run.
"""

from __future__ import annotations

import logging
import math
import os
import re
from pathlib import Path

import numpy as np
import pandas as pd

from .records import (RR_PHYSIOLOGICAL_RANGE, STAGES, Cohort, EcgRecord, RrSeries,
                      StageAnnotation, SubjectRecord)

logger = logging.getLogger(__name__)

MANDATORY_COLUMNS = ("subject_id", "age", "glucose_mmol_L")
SIGNAL_REF_COLUMN = "signal_ref"

_SPLIT = re.compile(r"[,;\t ]+")


class IngestError(ValueError):
    """Raised when an input file violates its documented format."""


def _delimiter_for(path, delimiter):
    if delimiter is not None:
        return delimiter
    return "\t" if str(path).lower().endswith((".tsv", ".tab")) else ","


def load_clinical_table(path, delimiter: str | None = None) -> Cohort:
    """Read the clinical table into a :class:`Cohort` (rows kept in file order)."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"clinical table not found: {path}")
    try:
        df = pd.read_csv(path, sep=_delimiter_for(path, delimiter), dtype={"subject_id": str},
                         encoding="utf-8", skipinitialspace=True, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise IngestError(f"empty clinical table: {path}") from exc
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in MANDATORY_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"missing mandatory column(s): {', '.join(missing)}")

    for col in ("age", "glucose_mmol_L"):
        converted = pd.to_numeric(df[col], errors="coerce")
        bad = converted.isna()
        if bad.any():
            sid = df.loc[bad.idxmax(), "subject_id"]
            raise IngestError(f"non-numeric {col} for subject {sid}")
        df[col] = converted.astype(float)

    ids = df["subject_id"].astype(str).str.strip()
    dup = ids[ids.duplicated()]
    if not dup.empty:
        raise IngestError(f"duplicate subject_id: {dup.iloc[0]}")

    clinical_cols = [c for c in df.columns
                     if c not in MANDATORY_COLUMNS and c != SIGNAL_REF_COLUMN
                     and pd.api.types.is_numeric_dtype(df[c])]
    ignored = [c for c in df.columns
               if c not in MANDATORY_COLUMNS and c != SIGNAL_REF_COLUMN and c not in clinical_cols]
    if ignored:
        logger.warning("ignoring non-numeric clinical column(s): %s", ", ".join(ignored))

    has_ref = SIGNAL_REF_COLUMN in df.columns
    subjects = []
    for i, sid in enumerate(ids):
        age = float(df["age"].iat[i])
        glucose = float(df["glucose_mmol_L"].iat[i])
        if age <= 0:
            raise IngestError(f"non-physiological age for subject {sid}: {age}")
        if glucose <= 0:
            raise IngestError(f"non-physiological glucose for subject {sid}: {glucose}")
        ref = None
        if has_ref:
            raw = df[SIGNAL_REF_COLUMN].iat[i]
            if isinstance(raw, str) and raw.strip():
                ref = raw.strip()
        clinical = {c: float(df[c].iat[i]) for c in clinical_cols}
        subjects.append(SubjectRecord(sid, age, glucose, clinical, ref))
    try:
        return Cohort(tuple(subjects))
    except ValueError as exc:
        raise IngestError(str(exc)) from exc


def write_clinical_table(cohort: Cohort, path, delimiter: str | None = None) -> None:
    """Write a cohort in the format read by :func:`load_clinical_table`."""
    path = Path(path)
    clinical_cols: list[str] = []
    for s in cohort:
        for key in s.clinical:
            if key not in clinical_cols:
                clinical_cols.append(key)
    rows = []
    for s in cohort:
        row = {"subject_id": s.subject_id, "age": s.age, "glucose_mmol_L": s.glucose}
        row.update({c: s.clinical.get(c, math.nan) for c in clinical_cols})
        rows.append(row)
    df = pd.DataFrame(rows, columns=[*MANDATORY_COLUMNS, *clinical_cols])
    if any(s.signal_ref is not None for s in cohort):
        df[SIGNAL_REF_COLUMN] = [s.signal_ref or "" for s in cohort]
    df.to_csv(path, sep=_delimiter_for(path, delimiter), index=False, lineterminator="\n")


def resolve_signal_ref(subject: SubjectRecord, base_dir) -> Path | None:
    if subject.signal_ref is None:
        return None
    ref = Path(subject.signal_ref)
    return ref if ref.is_absolute() else Path(base_dir) / ref


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_rr_series(path) -> RrSeries:
    """Read an RR file; onsets are cumulative sums of the intervals starting at 0 s.

    Intervals outside the physiological range are kept and reported through
    ``RrSeries.out_of_range`` plus a logged warning.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"RR file not found: {path}")
    intervals: list[float] = []
    labels: list[str | None] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = [t for t in _SPLIT.split(line) if t]
            if not _is_number(tokens[0]):
                if not intervals and lineno == 1:
                    continue  # header
                raise IngestError(f"{path}:{lineno}: unparsable RR value {tokens[0]!r}")
            value = float(tokens[0])
            if not math.isfinite(value) or value <= 0:
                raise IngestError(f"{path}:{lineno}: non-positive RR {value}")
            label = None
            if len(tokens) > 1:
                label = tokens[1].upper()
                if label not in STAGES:
                    raise IngestError(f"{path}:{lineno}: unknown stage token {tokens[1]!r}")
            intervals.append(value)
            labels.append(label)
    if not intervals:
        raise IngestError(f"empty RR file: {path}")
    stages = tuple(labels) if any(lb is not None for lb in labels) else None
    rr = RrSeries.from_intervals(intervals, stages)
    flagged = int(rr.out_of_range.sum())
    if flagged:
        lo, hi = RR_PHYSIOLOGICAL_RANGE
        logger.warning("%s: %d interval(s) outside [%g, %g] ms flagged", path, flagged, lo, hi)
    return rr


def write_rr_series(rr: RrSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, value in enumerate(rr.intervals):
            label = rr.stages[i] if rr.stages is not None else None
            v = repr(float(value))
            fh.write(f"{v},{label}\n" if label else f"{v}\n")


def load_ecg(path, fs: float = 250.0) -> EcgRecord:
    """Read a single-lead ECG (one mV sample per line) at sampling rate ``fs``."""
    if not (isinstance(fs, (int, float)) and fs > 0 and math.isfinite(fs)):
        raise IngestError(f"invalid sampling rate: {fs}")
    path = Path(path)
    if not path.exists():
        raise IngestError(f"ECG file not found: {path}")
    if os.path.getsize(path) == 0:
        raise IngestError(f"empty ECG file: {path}")
    try:
        df = pd.read_csv(path, header=None, comment="#", skip_blank_lines=True)
    except pd.errors.EmptyDataError as exc:
        raise IngestError(f"empty ECG file: {path}") from exc
    col = pd.to_numeric(df.iloc[:, 0], errors="coerce")
    if col.isna().any():
        bad = int(col.isna().idxmax())
        raise IngestError(f"{path}: unparsable sample {df.iat[bad, 0]!r} at record {bad + 1}")
    samples = col.to_numpy(dtype=float)
    if samples.size == 0:
        raise IngestError(f"empty ECG file: {path}")
    return EcgRecord(samples, float(fs))


def load_stage_annotation(path) -> StageAnnotation:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"annotation file not found: {path}")
    try:
        df = pd.read_csv(path, sep=_delimiter_for(path, None), skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return StageAnnotation(())
    df.columns = [str(c).strip() for c in df.columns]
    required = ("start_s", "end_s", "stage")
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: missing annotation column(s): {', '.join(missing)}")
    rows = zip(df["start_s"].astype(float), df["end_s"].astype(float),
               df["stage"].astype(str).str.strip().str.upper())
    try:
        return StageAnnotation(tuple(rows))
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def write_stage_annotation(ann: StageAnnotation, path) -> None:
    df = pd.DataFrame(list(ann.intervals), columns=["start_s", "end_s", "stage"])
    df.to_csv(path, index=False, lineterminator="\n")


def write_ecg(ecg: EcgRecord, path) -> None:
    np.savetxt(path, ecg.samples, fmt="%.9g")

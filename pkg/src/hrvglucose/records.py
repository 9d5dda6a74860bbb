"""Domain records shared across the pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

STAGES = ("DS", "REM", "RS")

#: plausible RR bounds in ms; values outside are flagged on load, never dropped
RR_PHYSIOLOGICAL_RANGE = (200.0, 4000.0)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float).ravel()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """Uniformly sampled single-lead ECG in mV."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise ValueError(f"invalid sampling rate: {self.fs}")
        object.__setattr__(self, "samples", _frozen(self.samples))

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True, eq=False)
class RrSeries:
    """RR intervals (ms) with onset times (s) and optional per-interval stage labels."""

    intervals: np.ndarray
    onsets: np.ndarray
    stages: Optional[tuple] = None

    def __post_init__(self):
        iv = _frozen(self.intervals)
        on = _frozen(self.onsets)
        if iv.shape != on.shape:
            raise ValueError("intervals and onsets differ in length")
        if np.any(~np.isfinite(iv)) or np.any(iv <= 0):
            raise ValueError("non-positive RR")
        if on.size > 1 and np.any(np.diff(on) <= 0):
            raise ValueError("onsets must be strictly increasing")
        stages = self.stages
        if stages is not None:
            stages = tuple(stages)
            if len(stages) != iv.size:
                raise ValueError("stage labels differ in length from intervals")
            bad = {s for s in stages if s is not None and s not in STAGES}
            if bad:
                raise ValueError(f"unknown stage label(s): {sorted(bad)}")
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "onsets", on)
        object.__setattr__(self, "stages", stages)

    @classmethod
    def from_intervals(cls, intervals, stages=None, start: float = 0.0) -> "RrSeries":
        """Build a series with onsets reconstructed as cumulative sums from ``start`` seconds."""
        iv = np.asarray(intervals, dtype=float).ravel()
        onsets = start + np.concatenate(([0.0], np.cumsum(iv[:-1]) / 1000.0)) if iv.size else iv
        return cls(iv, onsets, stages)

    @property
    def out_of_range(self) -> np.ndarray:
        lo, hi = RR_PHYSIOLOGICAL_RANGE
        return (self.intervals < lo) | (self.intervals > hi)

    def subset(self, mask) -> "RrSeries":
        mask = np.asarray(mask, dtype=bool)
        stages = None
        if self.stages is not None:
            stages = tuple(s for s, keep in zip(self.stages, mask) if keep)
        return RrSeries(self.intervals[mask], self.onsets[mask], stages)

    def __len__(self) -> int:
        return self.intervals.size

    def __eq__(self, other):
        if not isinstance(other, RrSeries):
            return NotImplemented
        return (np.array_equal(self.intervals, other.intervals)
                and np.array_equal(self.onsets, other.onsets)
                and self.stages == other.stages)


@dataclass(frozen=True)
class StageAnnotation:
    """Sorted, non-overlapping ``(start_s, end_s, stage)`` intervals; each is half-open."""

    intervals: tuple = ()

    def __post_init__(self):
        items = tuple((float(s), float(e), str(st)) for s, e, st in self.intervals)
        prev_end = -math.inf
        for start, end, stage in items:
            if stage not in STAGES:
                raise ValueError(f"unknown stage label: {stage!r}")
            if not start < end:
                raise ValueError(f"annotation start must precede end: ({start}, {end})")
            if start < prev_end:
                raise ValueError("annotation intervals must be sorted and non-overlapping")
            prev_end = end
        object.__setattr__(self, "intervals", items)

    def __len__(self) -> int:
        return len(self.intervals)


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age: float
    glucose: float
    clinical: dict = field(default_factory=dict)
    signal_ref: Optional[str] = None

    def __post_init__(self):
        if not (math.isfinite(self.age) and self.age > 0):
            raise ValueError(f"non-physiological age for subject {self.subject_id}: {self.age}")
        if not (math.isfinite(self.glucose) and self.glucose > 0):
            raise ValueError(f"non-physiological glucose for subject {self.subject_id}: {self.glucose}")

    def same_as(self, other: "SubjectRecord") -> bool:
        """Field-wise equality that treats missing clinical values as equal."""
        if (self.subject_id, self.age, self.glucose, self.signal_ref) != (
                other.subject_id, other.age, other.glucose, other.signal_ref):
            return False
        if list(self.clinical) != list(other.clinical):
            return False
        for key, value in self.clinical.items():
            o = other.clinical[key]
            if not (value == o or (math.isnan(value) and math.isnan(o))):
                return False
        return True


@dataclass(frozen=True)
class Cohort:
    subjects: tuple

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if len(subjects) < 2:
            raise ValueError("a cohort needs at least 2 subjects")
        seen = set()
        for s in subjects:
            if s.subject_id in seen:
                raise ValueError(f"duplicate subject_id: {s.subject_id}")
            seen.add(s.subject_id)
        object.__setattr__(self, "subjects", subjects)

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def same_as(self, other: "Cohort") -> bool:
        return len(self) == len(other) and all(a.same_as(b) for a, b in zip(self, other))

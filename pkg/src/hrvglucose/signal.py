"""ECG amplitude checks, QRS detection, RR extraction, artifact removal and
sleep-stage segmentation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from .records import STAGES, EcgRecord, RrSeries, StageAnnotation

AMPLITUDE_LIMIT_MV = 5.0
MIN_FS = 100.0
MIN_DURATION_S = 2.0


class SignalError(ValueError):
    """Raised when a signal cannot be processed as requested."""


@dataclass(frozen=True)
class ValidationReport:
    max_abs_mv: float
    passed: bool
    n_samples: int
    duration_s: float
    limit_mv: float = AMPLITUDE_LIMIT_MV

    def to_dict(self) -> dict:
        return asdict(self)


def validate_amplitude(ecg: EcgRecord, limit_mv: float = AMPLITUDE_LIMIT_MV) -> ValidationReport:
    """Check that every sample lies within ``±limit_mv``."""
    if len(ecg) == 0:
        raise SignalError("empty ECG record")
    max_abs = float(np.max(np.abs(ecg.samples)))
    return ValidationReport(max_abs, max_abs <= limit_mv, len(ecg), ecg.duration, limit_mv)


# ---------------------------------------------------------------------------
# QRS detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanTompkinsConfig:
    band: tuple = (5.0, 15.0)
    filter_order: int = 2
    integration_window_s: float = 0.150
    refractory_s: float = 0.200
    searchback_factor: float = 1.66
    learning_s: float = 2.0
    t_wave_s: float = 0.360


def _bandpass(x, fs, cfg):
    nyq = fs / 2.0
    if cfg.band[1] >= nyq:
        raise SignalError(f"fs={fs} Hz too low for a {cfg.band} Hz band-pass")
    sos = sps.butter(cfg.filter_order, cfg.band, btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, x)


def _derivative(x, fs):
    # five-point derivative: (-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]) * fs / 8
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0)
    return np.convolve(x, kernel, mode="same")


def _integrate(x, width):
    return np.convolve(x, np.ones(width) / width, mode="same")


def _pan_tompkins(x, fs, cfg):
    filtered = _bandpass(x, fs, cfg)
    slope = _derivative(filtered, fs)
    width = max(1, int(round(cfg.integration_window_s * fs)))
    mwi = _integrate(slope ** 2, width)

    refractory = int(round(cfg.refractory_s * fs))
    t_wave = int(round(cfg.t_wave_s * fs))
    half_qrs = max(1, width // 2)
    learn = mwi[: int(round(cfg.learning_s * fs))]
    spki = float(learn.max()) / 3.0
    npki = 0.5 * float(learn.mean())
    if spki <= 0:
        return np.empty(0, dtype=np.int64)

    def max_slope(i):
        return float(np.max(np.abs(slope[max(0, i - width):i + 1])))

    # integrator maxima closer than the refractory period collapse onto the largest
    candidates, _ = sps.find_peaks(mwi, distance=max(1, refractory))
    qrs: list[int] = []
    qrs_slope = 0.0
    rr_recent: list[int] = []
    noise: list[int] = []

    def threshold():
        return npki + 0.25 * (spki - npki)

    def accept(i, weight):
        nonlocal spki, qrs_slope
        spki = weight * mwi[i] + (1.0 - weight) * spki
        if qrs:
            rr_recent.append(i - qrs[-1])
            del rr_recent[:-8]
        qrs.append(i)
        qrs_slope = max_slope(i)

    for i in candidates:
        value = mwi[i]
        if qrs and i - qrs[-1] < refractory:
            continue
        # search-back for a missed beat before considering the current candidate
        if qrs and rr_recent:
            rr_avg = float(np.mean(rr_recent))
            if i - qrs[-1] > cfg.searchback_factor * rr_avg:
                t2 = 0.5 * threshold()
                pool = [j for j in noise if j - qrs[-1] >= refractory and mwi[j] > t2]
                if pool:
                    best = max(pool, key=lambda j: (mwi[j], -j))
                    noise = [j for j in noise if j > best]
                    accept(best, 0.25)
                    if i - qrs[-1] < refractory:
                        continue
        is_t_wave = bool(qrs) and i - qrs[-1] < t_wave and max_slope(i) < 0.5 * qrs_slope
        if value > threshold() and not is_t_wave:
            accept(i, 0.125)
            noise = []
        else:
            npki = 0.125 * value + 0.875 * npki
            noise.append(i)

    # locate the R wave on the band-passed trace around each integrator peak
    peaks = []
    n = x.size
    for i in qrs:
        lo, hi = max(0, i - half_qrs), min(n, i + half_qrs + 1)
        r = lo + int(np.argmax(filtered[lo:hi]))
        if peaks and r - peaks[-1] < refractory:
            if filtered[r] > filtered[peaks[-1]]:
                peaks[-1] = r
            continue
        peaks.append(r)
    return np.asarray(peaks, dtype=np.int64)


def detect_r_peaks(ecg: EcgRecord, config: PanTompkinsConfig | None = None) -> np.ndarray:
    """Detect R-peaks with the Pan-Tompkins chain.

    Band-pass, five-point derivative, squaring and moving-window integration
    feed dual adaptive thresholds with a refractory period and search-back.
    Leading all-zero samples are skipped before detection so that padding a
    record with silence shifts the returned indices exactly.

    Returns
    -------
    numpy.ndarray of int64
        Strictly increasing sample indices.
    """
    cfg = config or PanTompkinsConfig()
    if len(ecg) == 0:
        raise SignalError("empty ECG record")
    if ecg.fs < MIN_FS:
        raise SignalError(f"fs={ecg.fs} Hz too low for the QRS filter design (need >= {MIN_FS:g})")
    if ecg.duration < MIN_DURATION_S:
        raise SignalError(f"record shorter than {MIN_DURATION_S:g} s")
    nonzero = np.flatnonzero(ecg.samples)
    if nonzero.size == 0:
        return np.empty(0, dtype=np.int64)
    start = int(nonzero[0])
    x = ecg.samples[start:]
    if x.size < 16:
        return np.empty(0, dtype=np.int64)
    return _pan_tompkins(x, ecg.fs, cfg) + start


def peaks_to_rr(peaks, fs: float) -> RrSeries:
    """Convert R-peak sample indices to RR intervals (ms) with onsets at each beat (s)."""
    peaks = np.asarray(peaks)
    if peaks.size < 2:
        raise SignalError("need at least 2 peaks")
    if fs <= 0:
        raise SignalError(f"invalid sampling rate: {fs}")
    if np.any(np.diff(peaks) <= 0):
        raise SignalError("peak indices must be strictly increasing")
    intervals = np.diff(peaks) / fs * 1000.0
    onsets = peaks[:-1] / fs
    return RrSeries(intervals, onsets)


# ---------------------------------------------------------------------------
# artifacts and stages
# ---------------------------------------------------------------------------

def artifact_mask(intervals, window: int = 51, n_sd: float = 3.0) -> np.ndarray:
    """Boolean keep-mask for the local ``n_sd`` rule.

    Each interval is compared against the mean and sample SD of its
    neighbours inside a centred window of ``window`` intervals (clipped at
    the series edges; the interval itself is excluded). Intervals with fewer
    than two neighbours are always kept.
    """
    rr = np.asarray(intervals, dtype=float)
    n = rr.size
    half = window // 2
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        m = hi - lo - 1
        if m < 2:
            continue
        neigh = np.concatenate((rr[lo:i], rr[i + 1:hi]))
        mean = neigh.mean()
        sd = neigh.std(ddof=1)
        if abs(rr[i] - mean) > n_sd * sd:
            keep[i] = False
    return keep


def remove_artifacts(rr: RrSeries, window: int = 51, n_sd: float = 3.0,
                     until_stable: bool = False) -> RrSeries:
    """Drop intervals deviating more than ``n_sd`` local SDs from the local mean.

    One pass by default. Removing an outlier tightens its neighbours' windows,
    so a second pass over noisy data can flag further intervals; with
    ``until_stable=True`` passes repeat until nothing changes, which makes the
    result a fixed point.
    """
    if window < 3:
        raise SignalError("window must be >= 3")
    if len(rr) < 3:
        raise SignalError("series shorter than 3 intervals")
    out = rr.subset(artifact_mask(rr.intervals, window, n_sd))
    while until_stable and len(out) >= 3:
        mask = artifact_mask(out.intervals, window, n_sd)
        if mask.all():
            break
        out = out.subset(mask)
    return out


def segment_by_stage(rr: RrSeries, ann: StageAnnotation | None) -> dict[str, RrSeries]:
    """Split an RR series by sleep stage.

    An interval belongs to stage ``s`` when its onset falls inside a
    half-open ``[start, end)`` annotation labelled ``s``; intervals outside
    every annotation are discarded. With no annotation intervals, per-interval
    labels carried by ``rr`` are used instead.
    """
    labels: list
    if ann is not None and len(ann):
        starts = np.array([a[0] for a in ann.intervals])
        ends = np.array([a[1] for a in ann.intervals])
        names = [a[2] for a in ann.intervals]
        idx = np.searchsorted(starts, rr.onsets, side="right") - 1
        labels = [names[j] if j >= 0 and t < ends[j] else None for j, t in zip(idx, rr.onsets)]
    elif rr.stages is not None:
        labels = list(rr.stages)
    else:
        labels = [None] * len(rr)
    out = {}
    for stage in STAGES:
        mask = np.array([lb == stage for lb in labels], dtype=bool)
        out[stage] = rr.subset(mask) if len(rr) else rr
    return out

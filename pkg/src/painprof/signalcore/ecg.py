"""R-peak detection and inter-beat-interval window features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, find_peaks, sosfiltfilt

from painprof.errors import InputError

MIN_FS = 100.0
MIN_DURATION_S = 2.0


@dataclass(frozen=True)
class IbiSeries:
    r_peak_times: np.ndarray  # s, strictly increasing

    @property
    def ibis(self):
        """Inter-beat intervals in ms; ``ibis[k]`` ends at ``r_peak_times[k + 1]``."""
        return np.diff(self.r_peak_times) * 1000.0

    def __len__(self):
        return len(self.r_peak_times)

    @classmethod
    def empty(cls):
        return cls(np.empty(0))


def _refine(x, i):
    """Parabolic sub-sample offset of the maximum at integer index i."""
    if i <= 0 or i >= x.size - 1:
        return float(i)
    y0, y1, y2 = x[i - 1], x[i], x[i + 1]
    den = y0 - 2 * y1 + y2
    if den >= 0:
        return float(i)
    return i + 0.5 * (y0 - y2) / den


def detect_r_peaks(ecg, fs, refractory=0.25, t_start=0.0) -> IbiSeries:
    """Engelse-Zeelenberg style QRS detector.

    The baseline-free ECG is differentiated and low-pass filtered; the
    rectified slope signal is compared against a threshold that tracks the
    running QRS slope level, so detection does not depend on signal gain.
    Each detection is moved to the R apex of the filtered ECG.

    Parameters
    ----------
    ecg : array
        ECG samples (mV).
    fs : float
        Sampling rate in Hz, at least 100.
    refractory : float
        Minimum distance between R peaks in seconds (>= 0.2).
    """
    ecg = np.asarray(ecg, dtype=float)
    if fs < MIN_FS:
        raise InputError(f"ECG needs fs >= {MIN_FS:g} Hz, got {fs}")
    if ecg.size < MIN_DURATION_S * fs:
        raise InputError(f"need at least {MIN_DURATION_S:g} s of ECG")
    if not np.all(np.isfinite(ecg)):
        raise InputError("ECG contains non-finite samples")
    if refractory < 0.2:
        raise InputError("refractory period must be at least 200 ms")
    if np.ptp(ecg) == 0:
        return IbiSeries.empty()

    hp = butter(2, 0.5, btype="highpass", fs=fs, output="sos")
    x = sosfiltfilt(hp, ecg - ecg.mean())
    lp = butter(3, min(30.0, 0.45 * fs), btype="lowpass", fs=fs, output="sos")
    slope = np.abs(sosfiltfilt(lp, np.gradient(x) * fs))
    if slope.max() == 0:
        return IbiSeries.empty()

    refr = int(round(refractory * fs))
    cand, _ = find_peaks(slope, distance=refr)
    if cand.size == 0:
        return IbiSeries.empty()

    # initial QRS slope level: median of 2 s block maxima over the first 10 s
    block = int(2 * fs)
    head = slope[: max(block, int(10 * fs))]
    level = float(np.median([head[i : i + block].max() for i in range(0, head.size, block)]))
    noise = float(np.median(slope))

    accepted = []
    rr = []
    for i in cand:
        thr = noise + 0.3 * (level - noise)
        if accepted and i - accepted[-1] < refr:
            continue
        if slope[i] >= thr:
            if accepted:
                gap = i - accepted[-1]
                # search back with half threshold over a suspiciously long gap
                if rr and gap > 1.66 * np.mean(rr[-8:]):
                    lo, hi = accepted[-1] + refr, i - refr
                    miss = cand[(cand > lo) & (cand < hi)]
                    if miss.size:
                        j = miss[np.argmax(slope[miss])]
                        if slope[j] >= 0.5 * thr:
                            rr.append(j - accepted[-1])
                            accepted.append(int(j))
                            gap = i - j
                rr.append(gap)
            accepted.append(int(i))
            level = 0.875 * level + 0.125 * float(slope[i])
        else:
            noise = 0.875 * noise + 0.125 * float(slope[i])

    if not accepted:
        return IbiSeries.empty()

    # polarity: whichever extreme dominates around detections
    half = int(round(0.08 * fs))
    pos = neg = 0.0
    for i in accepted:
        seg = x[max(0, i - half) : i + half + 1]
        pos += seg.max()
        neg -= seg.min()
    sig = x if pos >= neg else -x

    apexes = []
    for i in accepted:
        lo = max(0, i - half)
        j = lo + int(np.argmax(sig[lo : i + half + 1]))
        pos_f = _refine(sig, j)
        if apexes and (pos_f - apexes[-1][0]) < refr:
            if sig[j] > apexes[-1][1]:
                apexes[-1] = (pos_f, sig[j])
            continue
        apexes.append((pos_f, sig[j]))
    times = t_start + np.array([p for p, _ in apexes]) / fs
    return IbiSeries(times)


def ibi_window_features(ibis: IbiSeries, t0, duration=6.0):
    """[ibi_mean, rmssd, ibi_sd, ibi_slope] for IBIs ending in [t0, t0 + duration).

    Returns ``None`` when fewer than two IBIs qualify; callers drop the window.
    """
    ends = ibis.r_peak_times[1:]
    sel = (ends >= t0) & (ends < t0 + duration)
    return ibi_features(ibis.ibis[sel])


def ibi_features(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return None
    diffs = np.diff(values)
    idx = np.arange(values.size)
    slope = np.polyfit(idx, values, 1)[0]
    return np.array(
        [
            values.mean(),
            np.sqrt(np.mean(diffs**2)),
            values.std(),
            slope,
        ]
    )


IBI_FEATURE_NAMES = ("ibi_mean", "rmssd", "ibi_sd", "ibi_slope")

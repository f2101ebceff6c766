"""Estimation/profiling windows, split eras, class balancing and extraction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from painprof import facefeat
from painprof.dataset.model import (
    STIM_DURATION_S, ProfileSet, ProfileWindow, Recording, WindowFeatures, WindowSet,
)
from painprof.errors import InputError
from painprof.signalcore.ecg import detect_r_peaks, ibi_window_features
from painprof.signalcore.eda import DeconvConfig, deconvolve_sc, sc_window_features

log = logging.getLogger(__name__)

TRAIN_STIMULI = 48
VAL_STIMULI = 10


@dataclass(frozen=True)
class WindowConfig:
    duration_s: float = 6.0
    step_s: float = 0.5
    profile_duration_s: float = 8.0
    profile_stimuli: int = TRAIN_STIMULI
    stim_duration_s: float = STIM_DURATION_S
    ecg_refractory_s: float = 0.25
    register_expressiveness: bool = True
    deconv: DeconvConfig = field(default_factory=DeconvConfig)


def label_at(t, onsets, levels, stim_duration=STIM_DURATION_S):
    """Level of the stimulus active at time t (onset <= t < onset + duration), else 0."""
    i = np.searchsorted(onsets, t, side="right") - 1
    if i >= 0 and t < onsets[i] + stim_duration:
        return int(levels[i])
    return 0


def era_bounds(onsets):
    """Start times of the validation and test eras (inf when absent)."""
    onsets = np.asarray(onsets)
    val_start = onsets[TRAIN_STIMULI] if onsets.size > TRAIN_STIMULI else np.inf
    test_start = onsets[TRAIN_STIMULI + VAL_STIMULI] if onsets.size > TRAIN_STIMULI + VAL_STIMULI else np.inf
    return float(val_start), float(test_start)


def split_of(t0, duration, onsets):
    """Era of a window; ``None`` if it runs into the next era."""
    val_start, test_start = era_bounds(onsets)
    if t0 < val_start:
        return "train" if t0 + duration <= val_start else None
    if t0 < test_start:
        return "val" if t0 + duration <= test_start else None
    return "test"


def window_starts(start, span, duration=6.0, step=0.5):
    n = int(np.floor((span - duration) / step + 1e-9)) + 1
    return start + step * np.arange(max(n, 0))


def slice_estimation_windows(rec: Recording, cfg: WindowConfig = WindowConfig()):
    """Unfilled windows at t0 = start, start + step, ... while t0 + duration <= span."""
    if rec.span < cfg.duration_s:
        raise InputError(f"recording {rec.subject_id} shorter than one window")
    out = []
    for t0 in window_starts(rec.start, rec.span, cfg.duration_s, cfg.step_s):
        out.append(
            WindowFeatures(
                rec.subject_id,
                float(t0),
                label_at(t0, rec.onsets, rec.levels, cfg.stim_duration_s),
                split_of(t0 - rec.start, cfg.duration_s, rec.onsets - rec.start),
            )
        )
    return out


def balance_training_set(windows: WindowSet, seed=0) -> WindowSet:
    """Downsample the larger of the P=0 / P>0 training classes to the smaller one.

    Validation and test windows pass through untouched; order is preserved.
    """
    train = windows.split == "train"
    zero = np.flatnonzero(train & (windows.label == 0))
    pos = np.flatnonzero(train & (windows.label > 0))
    if zero.size == 0 or pos.size == 0:
        raise InputError(f"cannot balance: {zero.size} P=0 and {pos.size} P>0 training windows")
    rng = np.random.default_rng(seed)
    keep = np.ones(len(windows), dtype=bool)
    if zero.size > pos.size:
        drop = np.setdiff1d(zero, rng.choice(zero, pos.size, replace=False))
    else:
        if pos.size > zero.size:
            log.warning("P>0 over-represented (%d vs %d); downsampling P>0", pos.size, zero.size)
        drop = np.setdiff1d(pos, rng.choice(pos, zero.size, replace=False))
    keep[drop] = False
    return windows.subset(keep)


# ---------------------------------------------------------------------------
# extraction


@dataclass
class SubjectSignals:
    """Per-recording intermediate results shared by all windows."""

    decomposition: object
    ibis: object
    frame_rows: np.ndarray  # (F, 70) per-frame video rows, NaN for unusable frames
    usable: np.ndarray  # (F,) bool
    expr_landmarks: np.ndarray  # (F, 68, 2) landmarks used for expressiveness
    sequence_mean: np.ndarray


def process_signals(rec: Recording, cfg: WindowConfig = WindowConfig()) -> SubjectSignals:
    decomp = deconvolve_sc(rec.sc, rec.fs, config=cfg.deconv, t_start=rec.start)
    ibis = detect_r_peaks(rec.ecg, rec.fs, refractory=cfg.ecg_refractory_s, t_start=rec.start)
    face = rec.face
    registered, bad = facefeat.register_track(face.landmarks)
    usable = face.success & ~bad
    if bad[face.success].any():
        log.warning("%s: %d tracked frames had degenerate reference points",
                    rec.subject_id, int(bad[face.success].sum()))
    rows = facefeat.frame_vectors(registered, face.gaze, face.pose, face.aus)
    expr = registered if cfg.register_expressiveness else face.landmarks.astype(float)
    seq_mean = facefeat.sequence_mean(expr[usable]) if usable.any() else np.full((68, 2), np.nan)
    return SubjectSignals(decomp, ibis, rows, usable, expr, seq_mean)


def _video_features(sig: SubjectSignals, face, t0, t1):
    i0, i1 = face.index_range(t0, t1)
    rows = sig.frame_rows[i0:i1][sig.usable[i0:i1]]
    if rows.shape[0] == 0:
        return None
    return facefeat.window_statistics(rows)


def physio_features(sig: SubjectSignals, t0, duration):
    ibi = ibi_window_features(sig.ibis, t0, duration)
    if ibi is None:
        return None
    return np.concatenate([sc_window_features(sig.decomposition, t0, duration), ibi])


def fill_windows(rec: Recording, windows, sig: SubjectSignals, cfg: WindowConfig = WindowConfig()):
    """Compute physio/video features; windows lacking either modality are dropped."""
    out = []
    dropped = 0
    for w in windows:
        if w.split is None:
            continue
        phys = physio_features(sig, w.t0, cfg.duration_s)
        vid = _video_features(sig, rec.face, w.t0, w.t0 + cfg.duration_s) if phys is not None else None
        if phys is None or vid is None:
            dropped += 1
            continue
        out.append(WindowFeatures(w.subject_id, w.t0, w.label, w.split, phys, vid))
    if dropped:
        log.info("%s: dropped %d windows with missing data", rec.subject_id, dropped)
    return out


def profile_windows(rec: Recording, sig: SubjectSignals, cfg: WindowConfig = WindowConfig()):
    """11D features on [onset, onset + 8 s) for the first 48 stimuli."""
    out = []
    t_end = rec.start + rec.span
    for k in range(min(cfg.profile_stimuli, rec.onsets.size)):
        t0 = float(rec.onsets[k])
        if t0 + cfg.profile_duration_s > t_end:
            break
        phys = physio_features(sig, t0, cfg.profile_duration_s)
        i0, i1 = rec.face.index_range(t0, t0 + cfg.profile_duration_s)
        lm = sig.expr_landmarks[i0:i1][sig.usable[i0:i1]]
        lexp = facefeat.expressiveness(lm, sig.sequence_mean)
        if phys is None or lexp is None:
            continue
        out.append(ProfileWindow(rec.subject_id, k + 1, int(rec.levels[k]), np.r_[phys, lexp]))
    return out


def extract_recording(rec: Recording, cfg: WindowConfig = WindowConfig()):
    """Estimation windows (as a WindowSet) and profile windows for one recording."""
    sig = process_signals(rec, cfg)
    windows = fill_windows(rec, slice_estimation_windows(rec, cfg), sig, cfg)
    ws = WindowSet.from_windows(windows) if windows else WindowSet.empty()
    return ws, ProfileSet.from_windows(profile_windows(rec, sig, cfg))


def extract_cohort(recordings, cfg: WindowConfig = WindowConfig()):
    sets, profiles = [], []
    for rec in recordings:
        ws, ps = extract_recording(rec, cfg)
        sets.append(ws)
        profiles.append(ps)
    return WindowSet.concat(sets), ProfileSet.concat(profiles)

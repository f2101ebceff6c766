"""Synthetic cohorts with planted pain-response profiles.

Each profile fixes how strongly three channels scale with pain level: the
evoked SCR amplitude, the heart-rate response (IBI shortening, negative for
decelerating responders) and the facial expression deformation.  Everything
else (tonic level, resting heart rate, face shape, head motion, schedule) is
drawn per subject.  ``noise`` scales every stochastic perturbation, so
``noise=0`` leaves subjects of one profile differing only in their
schedule and resting baselines.

Signals are quantised to the precision used by the CSV writers so a cohort
written to disk and read back is bit-identical to the in-memory one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from painprof.dataset.io import DECIMALS
from painprof.dataset.model import N_LEVELS, STIM_DURATION_S, FaceTrack, Recording
from painprof.errors import InputError
from painprof.facefeat import AU_NAMES
from painprof.signalcore.eda import IrfParams, convolve_driver


@dataclass(frozen=True)
class ProfileGains:
    """Evoked response at pain levels 1..4 for each channel."""

    scr: tuple  # SCR amplitude, µS
    hr: tuple  # peak IBI shortening, ms (negative: deceleration)
    exp: tuple  # peak expression deformation, px

    def __post_init__(self):
        for name in ("scr", "hr", "exp"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != N_LEVELS:
                raise InputError(f"{name} needs {N_LEVELS} per-level values, got {len(v)}")
            object.__setattr__(self, name, v)


# physiological responders graded with level; facial responders graded with
# level; late responders that barely react below level 3 and decelerate
DEFAULT_PROFILE_GAINS = (
    ProfileGains(scr=(0.02, 0.10, 0.20, 0.30), hr=(10.0, 25.0, 40.0, 60.0), exp=(1.5, 1.5, 1.5, 1.5)),
    ProfileGains(scr=(0.2, 0.2, 0.2, 0.2), hr=(30.0, 30.0, 30.0, 30.0), exp=(0.3, 1.5, 3.0, 4.5)),
    ProfileGains(scr=(0.0, 0.02, 0.12, 0.40), hr=(0.0, -5.0, -25.0, -60.0), exp=(0.0, 0.1, 1.5, 4.5)),
    ProfileGains(scr=(0.03, 0.03, 0.03, 0.03), hr=(0.0, 0.0, 0.0, 0.0), exp=(0.2, 0.2, 0.2, 0.2)),
)

PROFILE_AGE_MEANS = (48.0, 36.0, 40.0, 42.0)


@dataclass(frozen=True)
class CohortSpec:
    n_subjects: int = 24
    n_profiles: int = 3
    profile_gains: tuple = ()
    noise: float = 1.0
    seed: int = 0
    fs: float = 512.0
    fps: float = 25.0
    stimuli_per_level: int = 20
    lead_in_s: float = 10.0
    recovery_s: tuple = (8.0, 12.0)

    def gains(self):
        gains = tuple(self.profile_gains) or DEFAULT_PROFILE_GAINS[: self.n_profiles]
        gains = tuple(g if isinstance(g, ProfileGains) else ProfileGains(**g) for g in gains)
        if self.n_profiles < 1:
            raise InputError("n_profiles must be >= 1")
        if len(gains) != self.n_profiles:
            raise InputError(
                f"need {self.n_profiles} profile gain sets, have {len(gains)}"
            )
        if len(set(gains)) != len(gains):
            raise InputError("profile gains must be distinct")
        return gains


@dataclass
class SyntheticCohort:
    recordings: list
    planted: dict  # subject_id -> profile index
    beat_times: dict = field(default_factory=dict)  # subject_id -> planted R times


# ---------------------------------------------------------------------------
# schedule


def make_schedule(rng, per_level=20, lead_in=10.0, recovery=(8.0, 12.0)):
    """Onsets and levels: shuffled blocks holding every level once."""
    levels = np.concatenate([rng.permutation(N_LEVELS) + 1 for _ in range(per_level)])
    gaps = STIM_DURATION_S + rng.uniform(recovery[0], recovery[1], levels.size)
    onsets = lead_in + np.r_[0.0, np.cumsum(gaps[:-1])]
    span = onsets[-1] + gaps[-1]
    return np.round(onsets, DECIMALS["onset"]), levels, float(span)


# ---------------------------------------------------------------------------
# ECG


# P, Q, R, S, T waves: (offset s, width s, relative amplitude)
_PQRST = ((-0.20, 0.025, 0.12), (-0.035, 0.010, -0.12), (0.0, 0.010, 1.0),
          (0.035, 0.010, -0.25), (0.25, 0.045, 0.30))


def ecg_from_beats(beat_times, fs, n, amplitude=1.0):
    """Noise-free ECG with a Gaussian PQRST complex centred on each R time."""
    ecg = np.zeros(n)
    reach = int(np.ceil(0.45 * fs))
    for tb in beat_times:
        c = int(round(tb * fs))
        lo, hi = max(0, c - reach), min(n, c + reach + 1)
        if lo >= hi:
            continue
        t = np.arange(lo, hi) / fs - tb
        seg = np.zeros(hi - lo)
        for off, width, amp in _PQRST:
            seg += amp * np.exp(-0.5 * ((t - off) / width) ** 2)
        ecg[lo:hi] += amplitude * seg
    return ecg


def add_noise_snr(x, snr_db, rng):
    power = np.mean(x**2)
    return x + rng.normal(0.0, np.sqrt(power / 10 ** (snr_db / 10)), x.size)


def periodic_ecg(bpm, duration, fs, snr_db=None, rng=None, amplitude=1.0, t_first=0.5):
    """Constant-rate ECG and its planted R times; used by tests and demos."""
    beats = np.arange(t_first, duration - 0.45, 60.0 / bpm)
    n = int(round(duration * fs))
    ecg = ecg_from_beats(beats, fs, n, amplitude)
    if snr_db is not None:
        ecg = add_noise_snr(ecg, snr_db, rng or np.random.default_rng(0))
    return ecg, beats


def _hr_bump(tau):
    """Unit-peak heart-rate response, peaking 5 s after onset."""
    tau = np.maximum(tau, 0.0)
    return (tau / 5.0) * np.exp(1.0 - tau / 5.0)


def _beat_times(rng, span, onsets, levels, gain, noise):
    base = 60000.0 / rng.uniform(60.0, 80.0)
    rsa_amp = 10.0 * noise
    rsa_f = rng.uniform(0.2, 0.3)
    t = rng.uniform(0.2, 0.8)
    ar = 0.0
    beats = []
    while t < span - 0.5:
        beats.append(t)
        k = np.searchsorted(onsets, t, side="right") - 1
        resp = 0.0
        for j in range(max(0, k - 2), k + 1):
            resp += gain[levels[j] - 1] * _hr_bump(t - onsets[j])
        ar = 0.7 * ar + rng.normal(0.0, 8.0 * noise)
        ibi = base - resp + rsa_amp * np.sin(2 * np.pi * rsa_f * t) + ar
        t += max(ibi, 300.0) / 1000.0
    return np.asarray(beats)


# ---------------------------------------------------------------------------
# skin conductance


def _sc_signal(rng, fs, n, onsets, levels, gain, noise, irf=IrfParams()):
    t = np.arange(n) / fs
    tonic = rng.uniform(2.0, 8.0) + 0.4 * np.sin(2 * np.pi * t / rng.uniform(300, 600) + rng.uniform(0, 6.3))
    driver = np.zeros(n)
    scale = irf.peak()
    for onset, lvl in zip(onsets, levels):
        amp = gain[lvl - 1] * np.exp(rng.normal(0.0, 0.25 * noise))
        i = int(round((onset + rng.uniform(1.5, 3.0)) * fs))
        if i < n:
            driver[i] += amp / scale * fs
    if noise > 0:
        n_spont = rng.poisson(2.0 * t[-1] / 60.0)
        for i in rng.integers(0, n, n_spont):
            driver[i] += rng.exponential(0.04 * noise) / scale * fs
    sc = tonic + convolve_driver(driver, fs, irf)
    if noise > 0:
        sc = sc + rng.normal(0.0, 0.002 * noise, n)
    return sc


# ---------------------------------------------------------------------------
# face


def neutral_face():
    """A plausible 68-point frontal face in px, centred on the nose tip."""
    pts = np.zeros((68, 2))
    a = np.linspace(np.pi * 0.05, np.pi * 0.95, 17)
    pts[0:17] = np.c_[-70 * np.cos(a), -10 + 85 * np.sin(a)]  # jaw
    pts[17:22] = np.c_[np.linspace(-55, -15, 5), -45 - 6 * np.sin(np.linspace(0, np.pi, 5))]
    pts[22:27] = np.c_[np.linspace(15, 55, 5), -45 - 6 * np.sin(np.linspace(0, np.pi, 5))]
    pts[27:31] = np.c_[np.zeros(4), np.linspace(-30, -8, 4)]  # nose bridge
    pts[31:36] = np.c_[np.linspace(-12, 12, 5), [2, 4, 5, 4, 2]]  # nostrils
    eye = np.c_[[-12, -6, 6, 12, 6, -6], [0, -5, -5, 0, 4, 4]]
    pts[36:42] = eye + [-30, -30]
    pts[42:48] = eye + [30, -30]
    m = np.linspace(0, 2 * np.pi, 13)[:-1]
    pts[48:60] = np.c_[-26 * np.cos(m), 35 - 10 * np.sin(m)]
    m = np.linspace(0, 2 * np.pi, 9)[:-1]
    pts[60:68] = np.c_[-18 * np.cos(m), 35 - 4 * np.sin(m)]
    return pts


def pain_expression_field():
    """Unit displacement per landmark for a brow-lowering, eye-narrowing, mouth-stretching face."""
    f = np.zeros((68, 2))
    f[17:27, 1] = 1.0
    f[19:22, 0] = 0.4
    f[22:25, 0] = -0.4
    f[[37, 38, 43, 44], 1] = 0.7
    f[[40, 41, 46, 47], 1] = -0.5
    f[31:36, 1] = -0.5
    f[[50, 51, 52, 61, 62, 63], 1] = -0.6
    f[[48, 60], 0] = -0.8
    f[[54, 64], 0] = 0.8
    f[[56, 57, 58, 65, 66, 67], 1] = 0.6
    return f


# AU loadings on the expression intensity (per px of deformation)
_AU_LOAD = {"AU04": 0.45, "AU06": 0.3, "AU07": 0.4, "AU09": 0.2, "AU10": 0.25,
            "AU20": 0.15, "AU25": 0.2, "AU26": 0.15}


def _expression_envelope(tau):
    rise = np.clip((tau - 0.5) / 1.0, 0.0, 1.0)
    decay = np.exp(-np.maximum(tau - 4.5, 0.0) / 1.5)
    return np.where(tau > 0, rise * decay, 0.0)


def _smooth_walk(rng, n, sigma, fps, corr_s=3.0):
    """Stationary AR(1) path with standard deviation ``sigma``."""
    if sigma == 0:
        return np.zeros(n)
    alpha = np.exp(-1.0 / (corr_s * fps))
    steps = rng.normal(0.0, sigma * np.sqrt(1 - alpha**2), n)
    start = rng.normal(0.0, sigma)
    return lfilter([1.0], [1.0, -alpha], steps, zi=[alpha * start])[0]


def _face_track(rng, fps, span, onsets, levels, gain, noise):
    n = int(np.floor(span * fps))
    ts = np.round(np.arange(n) / fps, DECIMALS["timestamp"])
    intensity = np.zeros(n)
    for onset, lvl in zip(onsets, levels):
        i0, i1 = np.searchsorted(ts, [onset, onset + 12.0])
        intensity[i0:i1] += gain[lvl - 1] * np.exp(rng.normal(0.0, 0.2 * noise)) * _expression_envelope(ts[i0:i1] - onset)
    if noise > 0:
        for c in rng.uniform(0, span, rng.poisson(span / 60.0)):
            intensity += rng.uniform(0.5, 2.0) * noise * _expression_envelope(ts - c)

    shape = neutral_face() * rng.uniform(0.9, 1.1) + rng.normal(0.0, 1.0, (68, 2))
    lm = shape[None] + intensity[:, None, None] * pain_expression_field()[None]

    roll = 0.03 * noise * np.sin(2 * np.pi * ts / rng.uniform(20, 40)) + _smooth_walk(rng, n, 0.02 * noise, fps)
    scale = rng.uniform(1.6, 2.4) * (1 + _smooth_walk(rng, n, 0.02 * noise, fps))
    tx = rng.uniform(280, 360) + _smooth_walk(rng, n, 6.0 * noise, fps)
    ty = rng.uniform(200, 260) + _smooth_walk(rng, n, 4.0 * noise, fps)
    c, s = np.cos(roll), np.sin(roll)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2) * scale[:, None, None]
    lm = np.einsum("fij,fkj->fki", rot, lm) + np.stack([tx, ty], -1)[:, None, :]
    if noise > 0:
        lm = lm + rng.normal(0.0, 0.3 * noise, lm.shape)

    pose = np.stack(
        [
            (tx - 320) * 0.5,
            (ty - 240) * 0.5,
            600.0 / scale,
            _smooth_walk(rng, n, 0.05 * noise, fps),
            _smooth_walk(rng, n, 0.05 * noise, fps),
            roll,
        ],
        -1,
    )
    gx = _smooth_walk(rng, n, 0.08 * noise, fps, corr_s=1.0)
    gy = _smooth_walk(rng, n, 0.06 * noise, fps, corr_s=1.0)
    gaze = np.stack([gx, gy, -np.sqrt(np.clip(1 - gx**2 - gy**2, 0, 1))] * 2, -1)

    aus = np.zeros((n, len(AU_NAMES)))
    base = rng.uniform(0.0, 0.3, len(AU_NAMES))
    for k, name in enumerate(AU_NAMES):
        aus[:, k] = base[k] + _AU_LOAD.get(name, 0.0) * intensity
    if noise > 0:
        aus += rng.normal(0.0, 0.1 * noise, aus.shape)
        blink = rng.random(n) < 0.01 * noise
        aus[:, AU_NAMES.index("AU45")] += 3.0 * blink
    aus = np.clip(aus, 0.0, 5.0)

    success = np.ones(n, dtype=bool)
    if noise > 0:
        success = rng.random(n) > 0.005 * noise
    lm[~success] = 0.0
    gaze[~success] = 0.0
    pose[~success] = 0.0
    aus[~success] = 0.0
    return FaceTrack(
        frame=np.arange(n),
        timestamp=ts,
        success=success,
        landmarks=np.round(lm, DECIMALS["landmark"]),
        gaze=np.round(gaze, DECIMALS["gaze"]),
        pose=np.round(pose, DECIMALS["pose"]),
        aus=np.round(aus, DECIMALS["au"]),
    )


# ---------------------------------------------------------------------------


def synth_recording(subject_id, gains: ProfileGains, rng, spec: CohortSpec, age_mean=42.0):
    noise = spec.noise
    onsets, levels, span = make_schedule(rng, spec.stimuli_per_level, spec.lead_in_s, spec.recovery_s)
    mult = np.exp(rng.normal(0.0, 0.2 * noise, 3))
    n = int(np.floor(span * spec.fs))
    time = np.round(np.arange(n) / spec.fs, DECIMALS["time"])

    sc = _sc_signal(rng, spec.fs, n, onsets, levels, np.multiply(gains.scr, mult[0]), noise)
    beats = _beat_times(rng, span, onsets, levels, np.multiply(gains.hr, mult[1]), noise)
    ecg = ecg_from_beats(beats, spec.fs, n, rng.uniform(0.8, 1.6))
    if noise > 0:
        ecg += 0.08 * noise * np.sin(2 * np.pi * 0.15 * time + rng.uniform(0, 6.3))
        ecg = add_noise_snr(ecg, 30.0 - 5.0 * min(noise, 2.0), rng)
    face = _face_track(rng, spec.fps, span, onsets, levels, np.multiply(gains.exp, mult[2]), noise)
    rec = Recording(
        subject_id=subject_id,
        age=float(np.round(np.clip(rng.normal(age_mean, 8.0), 18, 70))),
        gender=("M", "F")[int(rng.integers(2))],
        time=time,
        sc=np.round(sc, DECIMALS["sc"]),
        ecg=np.round(ecg, DECIMALS["ecg"]),
        face=face,
        onsets=onsets,
        levels=levels,
    )
    return rec, beats


def generate_synthetic_cohort(spec: CohortSpec) -> SyntheticCohort:
    """Recordings for ``spec.n_subjects`` subjects spread evenly over the planted profiles."""
    gains = spec.gains()
    master = np.random.default_rng(spec.seed)
    assignment = master.permutation(np.arange(spec.n_subjects) % spec.n_profiles)
    recordings, planted, beats = [], {}, {}
    for i in range(spec.n_subjects):
        sid = f"S{i + 1:03d}"
        k = int(assignment[i])
        rng = np.random.default_rng([spec.seed, i + 1])
        rec, bt = synth_recording(sid, gains[k], rng, spec, PROFILE_AGE_MEANS[k % len(PROFILE_AGE_MEANS)])
        recordings.append(rec)
        planted[sid] = k
        beats[sid] = bt
    return SyntheticCohort(recordings, planted, beats)

"""In-memory recording and window containers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from painprof.errors import InputError
from painprof.facefeat import AU_NAMES, N_LANDMARKS, FaceFrame

N_LEVELS = 4
STIM_DURATION_S = 4.0
SPLITS = ("train", "val", "test")
MODALITIES = ("physio", "video", "multimodal")
N_PHYSIO = 10


@dataclass(frozen=True)
class Stimulus:
    onset: float
    level: int


@dataclass
class FaceTrack:
    """Struct-of-arrays view of per-frame OpenFace output."""

    frame: np.ndarray  # (F,) int
    timestamp: np.ndarray  # (F,) s
    success: np.ndarray  # (F,) bool
    landmarks: np.ndarray  # (F, 68, 2)
    gaze: np.ndarray  # (F, 6)
    pose: np.ndarray  # (F, 6)
    aus: np.ndarray  # (F, 17)

    def __post_init__(self):
        n = len(self.timestamp)
        if self.landmarks.shape != (n, N_LANDMARKS, 2):
            raise InputError(f"landmarks must be ({n}, {N_LANDMARKS}, 2), got {self.landmarks.shape}")
        if self.aus.shape != (n, len(AU_NAMES)):
            raise InputError(f"AU block must be ({n}, {len(AU_NAMES)}), got {self.aus.shape}")
        self.success = np.asarray(self.success, dtype=bool)
        self.aus = np.clip(self.aus, 0.0, 5.0)

    def __len__(self):
        return len(self.timestamp)

    def __getitem__(self, i) -> FaceFrame:
        return FaceFrame(
            int(self.frame[i]),
            float(self.timestamp[i]),
            bool(self.success[i]),
            self.landmarks[i],
            self.gaze[i],
            self.pose[i],
            self.aus[i],
        )

    def index_range(self, t0, t1):
        """Frame indices with timestamp in [t0, t1)."""
        return np.searchsorted(self.timestamp, [t0 - 1e-9, t1 - 1e-9])

    def frames_between(self, t0, t1):
        i0, i1 = self.index_range(t0, t1)
        return [self[i] for i in range(i0, i1)]


@dataclass
class Recording:
    subject_id: str
    age: float
    gender: str
    time: np.ndarray
    sc: np.ndarray  # µS
    ecg: np.ndarray  # mV
    face: FaceTrack
    onsets: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=float)
        self.levels = np.asarray(self.levels, dtype=int)
        if self.gender not in ("M", "F"):
            raise InputError(f"gender must be M or F, got {self.gender!r}")
        if np.any(np.diff(self.onsets) <= 0):
            raise InputError("stimulus onsets must be strictly increasing")
        if self.levels.size and (self.levels.min() < 1 or self.levels.max() > N_LEVELS):
            raise InputError("stimulus levels must lie in 1..4")

    @property
    def fs(self):
        return float(1.0 / np.median(np.diff(self.time)))

    @property
    def start(self):
        return float(self.time[0])

    @property
    def span(self):
        return float(self.time[-1] - self.time[0] + 1.0 / self.fs)

    @property
    def stimuli(self):
        return [Stimulus(float(o), int(v)) for o, v in zip(self.onsets, self.levels)]


@dataclass
class WindowFeatures:
    subject_id: str
    t0: float
    label: int
    split: str | None  # None: straddles an era boundary, excluded
    physio: np.ndarray | None = None
    video: np.ndarray | None = None

    @property
    def features(self):
        return np.concatenate([self.physio, self.video])


@dataclass
class ProfileWindow:
    subject_id: str
    stimulus_index: int  # 1-based
    level: int
    features: np.ndarray  # 6 SC + 4 ECG + expressiveness


@dataclass
class WindowSet:
    """Columnar table of extracted estimation windows."""

    subject: np.ndarray
    t0: np.ndarray
    label: np.ndarray
    split: np.ndarray
    physio: np.ndarray
    video: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t0)

    @classmethod
    def from_windows(cls, windows):
        windows = list(windows)
        return cls(
            subject=np.array([w.subject_id for w in windows], dtype=object),
            t0=np.array([w.t0 for w in windows], dtype=float),
            label=np.array([w.label for w in windows], dtype=int),
            split=np.array([w.split for w in windows], dtype=object),
            physio=np.array([w.physio for w in windows], dtype=float).reshape(len(windows), -1),
            video=np.array([w.video for w in windows], dtype=float).reshape(len(windows), -1),
        )

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            subject=np.concatenate([s.subject for s in sets]),
            t0=np.concatenate([s.t0 for s in sets]),
            label=np.concatenate([s.label for s in sets]),
            split=np.concatenate([s.split for s in sets]),
            physio=np.vstack([s.physio for s in sets]),
            video=np.vstack([s.video for s in sets]),
        )

    @classmethod
    def empty(cls):
        return cls(
            np.empty(0, dtype=object), np.empty(0), np.empty(0, dtype=int),
            np.empty(0, dtype=object), np.empty((0, N_PHYSIO)), np.empty((0, 280)),
        )

    def subset(self, mask):
        return WindowSet(
            self.subject[mask], self.t0[mask], self.label[mask], self.split[mask],
            self.physio[mask], self.video[mask], dict(self.meta),
        )

    def where_split(self, split):
        return self.subset(self.split == split)

    def features(self, modality="multimodal"):
        if modality == "physio":
            return self.physio
        if modality == "video":
            return self.video
        if modality == "multimodal":
            return np.hstack([self.physio, self.video])
        raise InputError(f"unknown modality {modality!r}; choose from {MODALITIES}")

    def __iter__(self):
        for i in range(len(self)):
            yield WindowFeatures(
                self.subject[i], float(self.t0[i]), int(self.label[i]), self.split[i],
                self.physio[i], self.video[i],
            )


@dataclass
class ProfileSet:
    subject: np.ndarray
    stimulus_index: np.ndarray
    level: np.ndarray
    features: np.ndarray  # (n, 11)

    def __len__(self):
        return len(self.level)

    @classmethod
    def from_windows(cls, windows):
        windows = list(windows)
        return cls(
            np.array([w.subject_id for w in windows], dtype=object),
            np.array([w.stimulus_index for w in windows], dtype=int),
            np.array([w.level for w in windows], dtype=int),
            np.array([w.features for w in windows], dtype=float).reshape(len(windows), 11),
        )

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        if not sets:
            return cls.from_windows([])
        return cls(
            np.concatenate([s.subject for s in sets]),
            np.concatenate([s.stimulus_index for s in sets]),
            np.concatenate([s.level for s in sets]),
            np.vstack([s.features for s in sets]),
        )

    def for_subject(self, subject_id):
        m = self.subject == subject_id
        return ProfileSet(self.subject[m], self.stimulus_index[m], self.level[m], self.features[m])

    def __iter__(self):
        for i in range(len(self)):
            yield ProfileWindow(self.subject[i], int(self.stimulus_index[i]), int(self.level[i]),
                                self.features[i])

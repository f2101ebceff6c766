"""Facial geometry, gaze, head-pose and action-unit features.

Landmarks follow the 68-point iBUG layout produced by OpenFace:
0-16 jaw contour, 17-26 eyebrows, 27-35 nose, 36-47 eyes, 48-67 mouth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from painprof.errors import InputError, RegistrationError

N_LANDMARKS = 68
AU_NAMES = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
    "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45",
)
GAZE_NAMES = ("gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z")
POSE_NAMES = ("pose_Tx", "pose_Ty", "pose_Tz", "pose_Rx", "pose_Ry", "pose_Rz")

# 68 minus contour (0-16) and eyebrows (17-26)
GEOMETRIC_LANDMARKS = np.arange(27, 68)
N_DISTANCES = GEOMETRIC_LANDMARKS.size  # 41
STATS = ("mean", "sd", "max", "min")
N_VIDEO_FEATURES = 4 * (N_DISTANCES + len(GAZE_NAMES) + len(POSE_NAMES) + len(AU_NAMES))  # 280

# canonical positions of left eye, right eye, nose, mouth centres (px)
DEFAULT_CANONICAL_REFS = np.array(
    [[-30.0, -35.0], [30.0, -35.0], [0.0, 0.0], [0.0, 35.0]]
)


@dataclass
class FaceFrame:
    frame_index: int
    timestamp: float
    success: bool
    landmarks: np.ndarray  # (68, 2)
    gaze: np.ndarray  # (6,)
    head_pose: np.ndarray  # (6,) Tx Ty Tz mm, Rx Ry Rz rad
    au_intensities: np.ndarray  # (17,)

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 2)
        if self.landmarks.shape[0] != N_LANDMARKS:
            raise InputError(f"expected {N_LANDMARKS} landmarks, got {self.landmarks.shape[0]}")
        self.gaze = np.asarray(self.gaze, dtype=float).reshape(6)
        self.head_pose = np.asarray(self.head_pose, dtype=float).reshape(6)
        aus = np.asarray(self.au_intensities, dtype=float).reshape(-1)
        if aus.size != len(AU_NAMES):
            raise InputError(f"expected {len(AU_NAMES)} AU intensities, got {aus.size}")
        self.au_intensities = np.clip(aus, 0.0, 5.0)


@dataclass
class RegisteredFrame:
    landmarks_registered: np.ndarray  # (68, 2)
    distances: np.ndarray  # (41,)
    transform: np.ndarray  # (3, 2): [x y 1] @ transform


def reference_points(landmarks):
    """Left-eye, right-eye, nose and mouth centres; works on (..., 68, 2)."""
    lm = np.asarray(landmarks, dtype=float)
    return np.stack(
        [
            lm[..., 36:42, :].mean(axis=-2),
            lm[..., 42:48, :].mean(axis=-2),
            lm[..., 33, :],
            lm[..., 48:68, :].mean(axis=-2),
        ],
        axis=-2,
    )


def _design(refs):
    return np.concatenate([refs, np.ones(refs.shape[:-1] + (1,))], axis=-1)


def _degenerate(refs, rtol=1e-9):
    centred = refs - refs.mean(axis=-2, keepdims=True)
    sv = np.linalg.svd(centred, compute_uv=False)
    return sv[..., -1] <= rtol * np.maximum(sv[..., 0], 1e-300)


def geometric_distances(registered):
    """Distances of the 41 retained landmarks to their centre of gravity; (..., 68, 2) -> (..., 41)."""
    pts = np.asarray(registered)[..., GEOMETRIC_LANDMARKS, :]
    centre = pts.mean(axis=-2, keepdims=True)
    return np.linalg.norm(pts - centre, axis=-1)


def register_landmarks(frame: FaceFrame, canonical_refs=DEFAULT_CANONICAL_REFS) -> RegisteredFrame:
    """Least-squares affine map of the four reference points onto ``canonical_refs``."""
    if not frame.success:
        raise RegistrationError(f"frame {frame.frame_index} was not tracked")
    refs = reference_points(frame.landmarks)
    if _degenerate(refs):
        raise RegistrationError(f"frame {frame.frame_index}: reference points are collinear")
    transform, *_ = np.linalg.lstsq(_design(refs), np.asarray(canonical_refs, float), rcond=None)
    reg = _design(frame.landmarks) @ transform
    return RegisteredFrame(reg, geometric_distances(reg), transform)


def register_track(landmarks, canonical_refs=DEFAULT_CANONICAL_REFS):
    """Vectorised registration of (F, 68, 2) landmarks.

    Returns the registered landmarks and a boolean mask of frames whose
    reference points were degenerate (their rows are NaN).
    """
    lm = np.asarray(landmarks, dtype=float)
    refs = reference_points(lm)
    bad = _degenerate(refs)
    X = _design(refs)  # (F, 4, 3)
    X[bad] = np.eye(4, 3)
    transform = np.linalg.pinv(X) @ np.asarray(canonical_refs, float)  # (F, 3, 2)
    reg = _design(lm) @ transform
    reg[bad] = np.nan
    return reg, bad


def frame_vectors(registered, gaze, pose, aus):
    """Per-frame 70D rows: 41 distances, 6 gaze, 6 pose, 17 AU."""
    return np.concatenate(
        [geometric_distances(registered), gaze, pose, np.clip(aus, 0.0, 5.0)], axis=-1
    )


_BLOCKS = (
    (0, N_DISTANCES),
    (N_DISTANCES, N_DISTANCES + 6),
    (N_DISTANCES + 6, N_DISTANCES + 12),
    (N_DISTANCES + 12, N_DISTANCES + 12 + len(AU_NAMES)),
)


def window_statistics(rows):
    """280D vector from per-frame 70D rows of one window.

    Within each block (distances, gaze, pose, AU) the layout is all means,
    then all SDs (population), then maxima, then minima.
    """
    rows = np.asarray(rows, dtype=float)
    # SD of the rows shifted by the first one: exact zero for constant columns
    mean, sd, mx, mn = rows.mean(0), (rows - rows[0]).std(0), rows.max(0), rows.min(0)
    return np.concatenate(
        [np.concatenate([s[a:b] for s in (mean, sd, mx, mn)]) for a, b in _BLOCKS]
    )


def video_feature_names():
    names = []
    groups = (
        [f"dist_{i}" for i in GEOMETRIC_LANDMARKS],
        list(GAZE_NAMES),
        list(POSE_NAMES),
        list(AU_NAMES),
    )
    for group in groups:
        for stat in STATS:
            names.extend(f"{g}_{stat}" for g in group)
    return names


def face_window_features(frames, canonical_refs=DEFAULT_CANONICAL_REFS):
    """280D statistics over the successfully tracked frames of a window.

    Returns ``None`` if no frame in the window was tracked.
    """
    rows = []
    for f in frames:
        if not f.success:
            continue
        reg = register_landmarks(f, canonical_refs)
        rows.append(
            np.concatenate([reg.distances, f.gaze, f.head_pose, f.au_intensities])
        )
    if not rows:
        return None
    return window_statistics(np.vstack(rows))


def expressiveness(window_landmarks, sequence_mean_landmarks):
    """Mean over frames of the summed landmark displacement from the sequence mean.

    ``window_landmarks`` is (N, 68, 2) for the tracked frames of the window,
    in the same coordinate frame as ``sequence_mean_landmarks``.  Returns
    ``None`` when N == 0.
    """
    lm = np.asarray(window_landmarks, dtype=float).reshape(-1, N_LANDMARKS, 2)
    if lm.shape[0] == 0:
        return None
    d = np.linalg.norm(lm - np.asarray(sequence_mean_landmarks)[None], axis=-1)
    return float(d.sum(axis=1).mean())


def sequence_mean(landmarks):
    """Arithmetic mean landmark configuration over all tracked frames (F, 68, 2)."""
    lm = np.asarray(landmarks, dtype=float)
    return np.nanmean(lm, axis=0)

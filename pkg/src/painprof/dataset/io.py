"""CSV/JSON ingestion and export of recordings.

File layouts (all CSV with a header row; ``.csv.gz`` is read transparently):

* biosignals: ``time_s,gsr_uS,ecg_mV``
* face: ``frame,timestamp,success,x_0..x_67,y_0..y_67,gaze_0_x..gaze_1_z,
  pose_Tx..pose_Rz,AU01_r..AU45_r``
* stimuli: ``onset_s,level``
* manifest (JSON): ``{"subjects": {id: {"biosignal", "face", "stimuli",
  "age", "gender"}}}`` with paths relative to the manifest.
"""
from __future__ import annotations

import gzip
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from painprof.dataset.model import FaceTrack, ProfileSet, Recording, WindowSet
from painprof.errors import IngestError, InputError, MissingArtifactError
from painprof.facefeat import AU_NAMES, GAZE_NAMES, N_LANDMARKS, POSE_NAMES

BIO_COLUMNS = ("time_s", "gsr_uS", "ecg_mV")
STIM_COLUMNS = ("onset_s", "level")
X_COLUMNS = tuple(f"x_{i}" for i in range(N_LANDMARKS))
Y_COLUMNS = tuple(f"y_{i}" for i in range(N_LANDMARKS))
AU_COLUMNS = tuple(f"{a}_r" for a in AU_NAMES)
FACE_COLUMNS = ("frame", "timestamp", "success") + X_COLUMNS + Y_COLUMNS + GAZE_NAMES + POSE_NAMES + AU_COLUMNS

# fixed decimals written per channel; values already rounded to these read back bit-exact
DECIMALS = {
    "time": 9,
    "sc": 6,
    "ecg": 6,
    "timestamp": 6,
    "landmark": 4,
    "gaze": 6,
    "pose": 6,
    "au": 4,
    "onset": 3,
}


@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    biosignal: Path
    face: Path
    stimuli: Path
    age: float
    gender: str


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise IngestError(path, "file not found")
    try:
        df = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise IngestError(path, "file is empty", line=1) from None
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise IngestError(path, f"malformed row: {exc}", line=int(m.group(1)) if m else None) from None
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _require(df, path, columns):
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise IngestError(path, f"missing column(s): {', '.join(missing)}", line=1)


def _numeric(df, path, columns):
    """Float matrix of ``columns``; the first unparseable cell is reported with its line."""
    out = np.empty((len(df), len(columns)))
    for j, col in enumerate(columns):
        s = df[col]
        if not pd.api.types.is_numeric_dtype(s):
            s = pd.to_numeric(s, errors="coerce")
        bad = s.isna().to_numpy()
        if bad.any():
            i = int(np.argmax(bad))
            raise IngestError(path, f"unparseable value {df[col].iloc[i]!r} in column {col}", line=i + 2)
        out[:, j] = s.to_numpy(dtype=float)
    return out


def _check_increasing(values, path, what):
    bad = np.flatnonzero(np.diff(values) <= 0)
    if bad.size:
        raise IngestError(path, f"{what} not strictly increasing", line=int(bad[0]) + 3)


def read_biosignals(path):
    df = _read_csv(path)
    _require(df, path, BIO_COLUMNS)
    data = _numeric(df, path, BIO_COLUMNS)
    if data.shape[0] < 2:
        raise IngestError(path, "need at least two samples")
    _check_increasing(data[:, 0], path, "time_s")
    return data[:, 0], data[:, 1], data[:, 2]


def _block_check(df, path, pattern, expected, label):
    found = [c for c in df.columns if re.fullmatch(pattern, c)]
    if len(found) != len(expected) or set(found) != set(expected):
        raise IngestError(
            path,
            f"{label} column block has {len(found)} columns "
            f"({found[0] if found else '-'}..{found[-1] if found else '-'}), expected {len(expected)} "
            f"({expected[0]}..{expected[-1]})",
            line=1,
        )


def read_face(path) -> FaceTrack:
    df = _read_csv(path)
    _block_check(df, path, r"x_\d+", X_COLUMNS, "landmark x")
    _block_check(df, path, r"y_\d+", Y_COLUMNS, "landmark y")
    _block_check(df, path, r"AU\d+_r", AU_COLUMNS, "action-unit")
    _require(df, path, ("frame", "timestamp", "success") + GAZE_NAMES + POSE_NAMES)
    head = _numeric(df, path, ("frame", "timestamp", "success"))
    if not np.isin(head[:, 2], (0, 1)).all():
        i = int(np.argmax(~np.isin(head[:, 2], (0, 1))))
        raise IngestError(path, "success must be 0 or 1", line=i + 2)
    if len(df) > 1:
        _check_increasing(head[:, 1], path, "timestamp")
    xs = _numeric(df, path, X_COLUMNS)
    ys = _numeric(df, path, Y_COLUMNS)
    return FaceTrack(
        frame=head[:, 0].astype(int),
        timestamp=head[:, 1],
        success=head[:, 2].astype(bool),
        landmarks=np.stack([xs, ys], axis=-1),
        gaze=_numeric(df, path, GAZE_NAMES),
        pose=_numeric(df, path, POSE_NAMES),
        aus=_numeric(df, path, AU_COLUMNS),
    )


def read_stimuli(path):
    df = _read_csv(path)
    _require(df, path, STIM_COLUMNS)
    data = _numeric(df, path, STIM_COLUMNS)
    onsets, levels = data[:, 0], data[:, 1]
    if len(onsets) > 1:
        _check_increasing(onsets, path, "onset_s")
    bad = np.flatnonzero((levels != np.round(levels)) | (levels < 1) | (levels > 4))
    if bad.size:
        raise IngestError(path, f"level {levels[bad[0]]!r} outside 1..4", line=int(bad[0]) + 2)
    return onsets, levels.astype(int)


def load_recording(entry: SubjectEntry) -> Recording:
    """Read and validate one subject's three files."""
    time, sc, ecg = read_biosignals(entry.biosignal)
    face = read_face(entry.face)
    onsets, levels = read_stimuli(entry.stimuli)
    try:
        return Recording(entry.subject_id, float(entry.age), str(entry.gender), time, sc, ecg,
                         face, onsets, levels)
    except InputError as exc:
        raise IngestError(entry.stimuli, str(exc)) from None


def read_manifest(path):
    path = Path(path)
    if not path.exists():
        raise IngestError(path, "manifest not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(path, f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    subjects = doc.get("subjects") if isinstance(doc, dict) else None
    if not isinstance(subjects, dict):
        raise IngestError(path, "manifest needs a 'subjects' object")
    entries = []
    for sid, item in subjects.items():
        try:
            entries.append(
                SubjectEntry(
                    str(sid),
                    path.parent / item["biosignal"],
                    path.parent / item["face"],
                    path.parent / item["stimuli"],
                    float(item["age"]),
                    str(item["gender"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(path, f"subject {sid}: bad or missing field {exc}") from None
    return entries


def load_cohort(manifest_path):
    return [load_recording(e) for e in read_manifest(manifest_path)]


# ---------------------------------------------------------------------------
# writers


def _write_table(path, header, data, fmt):
    with open_text(path) as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt=fmt, delimiter=",")


def open_text(path):
    """Text handle for writing; ``.gz`` paths are gzip-compressed with a fixed mtime."""
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.GzipFile(path, "wb", mtime=0), encoding="utf-8", newline="\n")
    return open(path, "w", encoding="utf-8", newline="\n")


def write_recording(rec: Recording, directory, compress=False):
    """Write the three CSV files; returns the manifest entry (paths relative to ``directory``).

    Values are written with the fixed precision in ``DECIMALS``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".csv.gz" if compress else ".csv"
    names = {k: f"{rec.subject_id}_{k}{ext}" for k in ("biosignal", "face", "stimuli")}
    d = DECIMALS

    _write_table(
        directory / names["biosignal"], BIO_COLUMNS,
        np.column_stack([rec.time, rec.sc, rec.ecg]),
        [f"%.{d['time']}f", f"%.{d['sc']}f", f"%.{d['ecg']}f"],
    )
    f = rec.face
    data = np.column_stack([
        f.frame, f.timestamp, f.success.astype(int),
        f.landmarks[:, :, 0], f.landmarks[:, :, 1], f.gaze, f.pose, f.aus,
    ])
    fmt = (["%d", f"%.{d['timestamp']}f", "%d"]
           + [f"%.{d['landmark']}f"] * (2 * N_LANDMARKS)
           + [f"%.{d['gaze']}f"] * len(GAZE_NAMES)
           + [f"%.{d['pose']}f"] * len(POSE_NAMES)
           + [f"%.{d['au']}f"] * len(AU_COLUMNS))
    _write_table(directory / names["face"], FACE_COLUMNS, data, fmt)
    _write_table(
        directory / names["stimuli"], STIM_COLUMNS,
        np.column_stack([rec.onsets, rec.levels]), [f"%.{d['onset']}f", "%d"],
    )
    return {**names, "age": rec.age, "gender": rec.gender}


def write_cohort(recordings, directory, compress=False, extra=None):
    """Write all recordings plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    subjects = {r.subject_id: write_recording(r, directory, compress) for r in recordings}
    doc = {"subjects": subjects}
    if extra:
        doc.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# window / profile stores (directories of .npy arrays plus a JSON sidecar;
# avoids .npz, whose zip entries carry timestamps)


def _save_arrays(directory, arrays, meta):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        np.save(directory / f"{name}.npy", np.ascontiguousarray(arr), allow_pickle=False)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_arrays(directory, names):
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise MissingArtifactError(f"no store at {directory}")
    meta = json.loads(meta_path.read_text())
    return {n: np.load(directory / f"{n}.npy", allow_pickle=False) for n in names}, meta


def save_windows(ws: WindowSet, directory, provenance=None):
    meta = {
        "kind": "windows",
        "subject": [str(s) for s in ws.subject],
        "split": [s for s in ws.split],
        **(provenance or {}),
    }
    _save_arrays(directory, {"t0": ws.t0, "label": ws.label, "physio": ws.physio, "video": ws.video}, meta)


def load_windows(directory) -> WindowSet:
    arrays, meta = _load_arrays(directory, ("t0", "label", "physio", "video"))
    return WindowSet(
        np.array(meta["subject"], dtype=object).reshape(-1),
        arrays["t0"], arrays["label"],
        np.array(meta["split"], dtype=object).reshape(-1),
        arrays["physio"], arrays["video"],
    )


def save_profiles(ps: ProfileSet, directory, demographics=None, provenance=None):
    meta = {
        "kind": "profiles",
        "subject": [str(s) for s in ps.subject],
        "demographics": demographics or {},
        **(provenance or {}),
    }
    _save_arrays(directory, {"stimulus_index": ps.stimulus_index, "level": ps.level,
                             "features": ps.features}, meta)


def load_profiles(directory):
    """Returns the ProfileSet and the demographics mapping stored with it."""
    arrays, meta = _load_arrays(directory, ("stimulus_index", "level", "features"))
    ps = ProfileSet(np.array(meta["subject"], dtype=object).reshape(-1), arrays["stimulus_index"],
                    arrays["level"], arrays["features"].reshape(-1, 11))
    return ps, meta.get("demographics", {})

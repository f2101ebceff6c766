import json

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from conftest import toy_windows
from painprof import profiler
from painprof.dataset import io as dio
from painprof.dataset.model import FaceTrack, ProfileSet, Recording, WindowSet
from painprof.dataset.synth import (
    CohortSpec, DEFAULT_PROFILE_GAINS, ProfileGains, generate_synthetic_cohort, make_schedule,
    neutral_face,
)
from painprof.dataset.windows import (
    WindowConfig, balance_training_set, extract_recording, label_at, process_signals,
    profile_windows, slice_estimation_windows, split_of,
)
from painprof.errors import IngestError, InputError


def make_recording(span=10.0, fs=64.0, fps=10.0, onsets=(2.0, 7.0), levels=(3, 1)):
    n = int(round(span * fs))
    nf = int(round(span * fps))
    face = np.broadcast_to(neutral_face(), (nf, 68, 2)).copy()
    track = FaceTrack(np.arange(nf), np.arange(nf) / fps, np.ones(nf, bool), face,
                      np.zeros((nf, 6)), np.zeros((nf, 6)), np.zeros((nf, 17)))
    return Recording("S001", 40.0, "F", np.arange(n) / fs, np.full(n, 3.0), np.zeros(n), track,
                     np.array(onsets), np.array(levels))


class TestSlicing:
    def test_ten_second_recording(self):
        w = slice_estimation_windows(make_recording())
        np.testing.assert_allclose([x.t0 for x in w], np.arange(9) * 0.5)

    def test_label_during_stimulus(self):
        w = {x.t0: x.label for x in slice_estimation_windows(make_recording())}
        assert w[2.0] == 3 and w[3.5] == 3
        assert w[1.5] == 0  # overlaps the stimulus but starts before it
        assert w[0.0] == 0 and w[4.0] == 3

    def test_full_recording_window_count(self, small_cohort):
        rec = small_cohort.recordings[0]
        w = slice_estimation_windows(rec)
        assert len(w) == int(np.floor((rec.span - 6.0) / 0.5)) + 1

    def test_labels_brute_force(self, small_cohort):
        rec = small_cohort.recordings[1]
        for x in slice_estimation_windows(rec):
            active = [lv for o, lv in zip(rec.onsets, rec.levels) if o <= x.t0 < o + 4.0]
            assert x.label == (active[0] if active else 0)

    def test_split_eras(self, small_cohort):
        rec = small_cohort.recordings[0]
        on = rec.onsets
        for x in slice_estimation_windows(rec):
            end = x.t0 + 6.0
            if end <= on[48]:
                assert x.split == "train"
            elif on[48] <= x.t0 and end <= on[58]:
                assert x.split == "val"
            elif x.t0 >= on[58]:
                assert x.split == "test"
            else:
                assert x.split is None  # straddles an era boundary

    def test_split_of_without_later_eras(self):
        assert split_of(100.0, 6.0, np.arange(10.0)) == "train"

    def test_label_at_boundaries(self):
        on, lv = np.array([10.0]), np.array([2])
        assert label_at(9.999, on, lv) == 0
        assert label_at(10.0, on, lv) == 2
        assert label_at(14.0, on, lv) == 0

    def test_too_short(self):
        with pytest.raises(InputError):
            slice_estimation_windows(make_recording(span=5.0, onsets=(), levels=()))


def labelled(n_zero, n_pos):
    ws = toy_windows(1, n_zero + n_pos)
    ws.split[:] = "train"
    ws.label[:] = np.r_[np.zeros(n_zero, int), np.ones(n_pos, int) * 2]
    return ws


class TestBalance:
    def test_downsamples_zero_class(self):
        out = balance_training_set(labelled(100, 40), seed=3)
        assert (out.label == 0).sum() == 40 and (out.label > 0).sum() == 40

    def test_positive_windows_untouched(self):
        ws = labelled(100, 40)
        out = balance_training_set(ws, seed=3)
        np.testing.assert_array_equal(out.t0[out.label > 0], ws.t0[ws.label > 0])

    def test_balanced_is_fixed_point(self):
        ws = labelled(40, 40)
        out = balance_training_set(ws, seed=3)
        np.testing.assert_array_equal(out.t0, ws.t0)

    def test_determinism(self):
        ws = labelled(100, 40)
        a, b = balance_training_set(ws, 7), balance_training_set(ws, 7)
        c = balance_training_set(ws, 8)
        np.testing.assert_array_equal(a.t0, b.t0)
        assert len(c) == len(a)

    def test_other_splits_pass_through(self):
        ws = labelled(100, 40)
        ws.split[:50] = "test"
        out = balance_training_set(ws, 0)
        assert (out.split == "test").sum() == 50

    def test_empty_class(self):
        with pytest.raises(InputError):
            balance_training_set(labelled(10, 0))


class TestSynthetic:
    def test_schedule_structure(self):
        onsets, levels, span = make_schedule(np.random.default_rng(0))
        assert onsets.size == 80
        assert np.bincount(levels)[1:].tolist() == [20] * 4
        gaps = np.diff(onsets)
        assert gaps.min() >= 12.0 - 1e-3 and gaps.max() <= 16.0 + 1e-3
        assert span > onsets[-1] + 12.0 - 1e-3

    def test_planted_assignments_balanced(self):
        spec = CohortSpec(n_subjects=9, n_profiles=3, fs=128.0, fps=10.0, stimuli_per_level=2)
        cohort = generate_synthetic_cohort(spec)
        assert sorted(np.bincount(list(cohort.planted.values()))) == [3, 3, 3]

    def test_seed_reproducible(self):
        spec = CohortSpec(n_subjects=2, fs=128.0, fps=10.0, stimuli_per_level=2)
        a, b = generate_synthetic_cohort(spec), generate_synthetic_cohort(spec)
        np.testing.assert_array_equal(a.recordings[1].sc, b.recordings[1].sc)
        np.testing.assert_array_equal(a.recordings[1].face.landmarks, b.recordings[1].face.landmarks)

    def test_single_profile(self):
        spec = CohortSpec(n_subjects=4, n_profiles=1, fs=128.0, fps=10.0, stimuli_per_level=2)
        assert set(generate_synthetic_cohort(spec).planted.values()) == {0}

    def test_gains_must_differ(self):
        g = DEFAULT_PROFILE_GAINS[0]
        with pytest.raises(InputError):
            CohortSpec(n_profiles=2, profile_gains=(g, g)).gains()

    def test_gain_length_checked(self):
        with pytest.raises(InputError):
            ProfileGains(scr=(1, 2, 3), hr=(0, 0, 0, 0), exp=(0, 0, 0, 0))

    def test_noiseless_profiles_separate(self):
        spec = CohortSpec(n_subjects=9, n_profiles=3, noise=0.0, seed=4, fs=128.0, fps=10.0)
        cohort = generate_synthetic_cohort(spec)
        cfg = WindowConfig()
        ps = ProfileSet.concat([ProfileSet.from_windows(profile_windows(r, process_signals(r, cfg), cfg))
                                for r in cohort.recordings])
        desc, excluded = profiler.build_descriptors(ps)
        assert not excluded
        X = profiler.descriptor_matrix(desc)
        truth = np.array([cohort.planted[d.subject_id] for d in desc])
        D = np.linalg.norm(X[:, None] - X[None], axis=-1)
        same = truth[:, None] == truth[None]
        assert D[same].max() < D[~same].min()
        model = profiler.spectral_cluster(profiler.similarity_matrix(X), 3, seed=0)
        assert adjusted_rand_score(truth, model.labels) == 1.0


# ---------------------------------------------------------------------------
# file ingestion


def write_minimal(directory, n_landmarks=68, n_aus=17, bio_rows=None):
    fs, fps, span = 64, 10, 10.0
    t = np.arange(int(span * fs)) / fs
    bio = ["time_s,gsr_uS,ecg_mV"] + (bio_rows or [f"{x:.6f},3.0,0.0" for x in t])
    (directory / "bio.csv").write_text("\n".join(bio) + "\n")
    cols = (["frame", "timestamp", "success"] + [f"x_{i}" for i in range(n_landmarks)]
            + [f"y_{i}" for i in range(n_landmarks)]
            + [f"gaze_{e}_{a}" for e in (0, 1) for a in "xyz"]
            + ["pose_Tx", "pose_Ty", "pose_Tz", "pose_Rx", "pose_Ry", "pose_Rz"]
            + [f"AU{k:02d}_r" for k in (1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45)[:n_aus]])
    face = neutral_face()
    rows = [",".join(cols)]
    for i in range(int(span * fps)):
        vals = [str(i), f"{i / fps:.6f}", "1"] + [f"{v:.4f}" for v in face[:n_landmarks, 0]] \
            + [f"{v:.4f}" for v in face[:n_landmarks, 1]] + ["0"] * 12 + ["0.5"] * n_aus
        rows.append(",".join(vals))
    (directory / "face.csv").write_text("\n".join(rows) + "\n")
    (directory / "stim.csv").write_text("onset_s,level\n2.0,3\n7.0,1\n")
    return dio.SubjectEntry("S001", directory / "bio.csv", directory / "face.csv",
                            directory / "stim.csv", 33.0, "M")


class TestIngest:
    def test_minimal_fixture(self, tmp_path):
        rec = dio.load_recording(write_minimal(tmp_path))
        assert len(rec.stimuli) == 2
        assert rec.levels.tolist() == [3, 1]
        assert rec.face.landmarks.shape == (100, 68, 2)
        assert rec.span == pytest.approx(10.0)

    def test_67_landmark_columns(self, tmp_path):
        with pytest.raises(IngestError, match="landmark x column block"):
            dio.load_recording(write_minimal(tmp_path, n_landmarks=67))

    def test_16_au_columns(self, tmp_path):
        with pytest.raises(IngestError, match="action-unit column block"):
            dio.load_recording(write_minimal(tmp_path, n_aus=16))

    def test_unparseable_value_reports_line(self, tmp_path):
        rows = ["0.0,3.0,0.0", "0.1,abc,0.0", "0.2,3.0,0.0"]
        entry = write_minimal(tmp_path, bio_rows=rows)
        with pytest.raises(IngestError) as exc:
            dio.read_biosignals(entry.biosignal)
        assert exc.value.line == 3
        assert "abc" in str(exc.value)

    def test_non_monotone_time_reports_line(self, tmp_path):
        rows = ["0.0,3.0,0.0", "0.1,3.0,0.0", "0.1,3.0,0.0"]
        entry = write_minimal(tmp_path, bio_rows=rows)
        with pytest.raises(IngestError) as exc:
            dio.read_biosignals(entry.biosignal)
        assert exc.value.line == 4
        assert str(exc.value).startswith(f"{entry.biosignal}:4:")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="file not found"):
            dio.read_biosignals(tmp_path / "nope.csv")

    def test_level_out_of_range(self, tmp_path):
        entry = write_minimal(tmp_path)
        entry.stimuli.write_text("onset_s,level\n2.0,3\n7.0,5\n")
        with pytest.raises(IngestError) as exc:
            dio.read_stimuli(entry.stimuli)
        assert exc.value.line == 3

    def test_missing_column(self, tmp_path):
        entry = write_minimal(tmp_path)
        entry.stimuli.write_text("onset_s,lvl\n2.0,3\n")
        with pytest.raises(IngestError, match="missing column"):
            dio.read_stimuli(entry.stimuli)

    def test_manifest_paths_relative(self, tmp_path):
        write_minimal(tmp_path)
        (tmp_path / "m.json").write_text(json.dumps({"subjects": {"S001": {
            "biosignal": "bio.csv", "face": "face.csv", "stimuli": "stim.csv", "age": 30, "gender": "F"}}}))
        recs = dio.load_cohort(tmp_path / "m.json")
        assert recs[0].gender == "F" and recs[0].age == 30.0

    def test_manifest_missing_field(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"subjects": {"S001": {"biosignal": "b.csv"}}}))
        with pytest.raises(IngestError, match="S001"):
            dio.read_manifest(tmp_path / "m.json")


class TestRoundTrip:
    @pytest.mark.parametrize("compress", [False, True])
    def test_recording_bit_exact(self, small_cohort, tmp_path, compress):
        rec = small_cohort.recordings[0]
        path = dio.write_cohort([rec], tmp_path, compress)
        back = dio.load_cohort(path)[0]
        for name in ("time", "sc", "ecg", "onsets", "levels"):
            np.testing.assert_array_equal(getattr(back, name), getattr(rec, name))
        for name in ("timestamp", "success", "landmarks", "gaze", "pose", "aus"):
            np.testing.assert_array_equal(getattr(back.face, name), getattr(rec.face, name))
        assert (back.age, back.gender) == (rec.age, rec.gender)

    def test_extraction_identical_after_reread(self, small_cohort, tmp_path):
        rec = small_cohort.recordings[2]
        back = dio.load_cohort(dio.write_cohort([rec], tmp_path))[0]
        ws_a, ps_a = extract_recording(rec)
        ws_b, ps_b = extract_recording(back)
        np.testing.assert_array_equal(ws_a.physio, ws_b.physio)
        np.testing.assert_array_equal(ws_a.video, ws_b.video)
        np.testing.assert_array_equal(ps_a.features, ps_b.features)

    def test_gzip_output_deterministic(self, small_cohort, tmp_path):
        rec = small_cohort.recordings[0]
        dio.write_cohort([rec], tmp_path / "a", True)
        dio.write_cohort([rec], tmp_path / "b", True)
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_window_store(self, tmp_path):
        ws = toy_windows(3, 12)
        dio.save_windows(ws, tmp_path / "w", {"provenance": {"seed": 1}})
        back = dio.load_windows(tmp_path / "w")
        for name in ("subject", "t0", "label", "split", "physio", "video"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ws, name))

    def test_profile_store(self, tmp_path):
        rng = np.random.default_rng(0)
        ps = ProfileSet(np.array(["A", "A", "B"], dtype=object), np.array([1, 2, 1]),
                        np.array([1, 2, 1]), rng.normal(size=(3, 11)))
        demo = {"A": {"age": 30.0, "gender": "M"}, "B": {"age": 41.0, "gender": "F"}}
        dio.save_profiles(ps, tmp_path / "p", demo)
        back, demo_back = dio.load_profiles(tmp_path / "p")
        np.testing.assert_array_equal(back.features, ps.features)
        assert demo_back == demo


class TestWindowSet:
    def test_modalities(self):
        ws = toy_windows(2, 8)
        assert ws.features("physio").shape[1] == 10
        assert ws.features("video").shape[1] == 280
        assert ws.features("multimodal").shape[1] == 290
        with pytest.raises(InputError):
            ws.features("audio")

    def test_concat_and_iterate(self):
        a, b = toy_windows(1, 4, seed=1), toy_windows(1, 6, seed=2)
        ws = WindowSet.concat([a, b, WindowSet.empty()])
        assert len(ws) == 10
        w = list(ws)[5]
        np.testing.assert_array_equal(w.features, np.r_[b.physio[1], b.video[1]])

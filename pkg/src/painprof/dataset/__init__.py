"""Recordings, window slicing, file I/O and synthetic cohorts."""
from painprof.dataset.io import (
    SubjectEntry, load_cohort, load_profiles, load_recording, load_windows, read_manifest,
    save_profiles, save_windows, write_cohort, write_recording,
)
from painprof.dataset.model import (
    MODALITIES, N_LEVELS, SPLITS, FaceTrack, ProfileSet, ProfileWindow, Recording, Stimulus,
    WindowFeatures, WindowSet,
)
from painprof.dataset.synth import CohortSpec, ProfileGains, SyntheticCohort, generate_synthetic_cohort
from painprof.dataset.windows import (
    WindowConfig, balance_training_set, extract_cohort, extract_recording, label_at,
    slice_estimation_windows, split_of,
)

"""Per-subject 44D pain-response descriptors."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from painprof.dataset.model import N_LEVELS, ProfileSet
from painprof.errors import InputError

log = logging.getLogger(__name__)

N_PROFILE_FEATURES = 11
DESCRIPTOR_DIM = N_PROFILE_FEATURES * N_LEVELS
EPS = 1e-12


@dataclass
class SubjectDescriptor:
    subject_id: str
    p: np.ndarray  # (11, 4) per-level feature means, p[j, level - 1]
    p_hat: np.ndarray  # (11, 4) normalised across levels

    @property
    def vector(self):
        """44D level-major vector: all 11 features of level 1, then level 2, ..."""
        return self.p_hat.T.ravel()


def normalize_levels(p):
    """Scale each feature row so it sums to 1 over the levels.

    Uses |p| / sum|p|, which equals p / sum(p) for rows of one sign and stays
    continuous when a row changes sign (IBI slope can).  Rows whose absolute
    sum is below ``EPS`` become uniform.
    """
    a = np.abs(np.asarray(p, dtype=float))
    s = a.sum(axis=-1, keepdims=True)
    safe = np.where(s > EPS, s, 1.0)
    return np.where(s > EPS, a / safe, 1.0 / a.shape[-1])


def build_descriptor(profiles: ProfileSet, subject_id=None) -> SubjectDescriptor:
    """Average each profile feature per level and normalise across levels.

    Raises InputError if some level 1..4 has no profile window.
    """
    if subject_id is not None:
        profiles = profiles.for_subject(subject_id)
    subjects = set(profiles.subject.tolist())
    if len(subjects) != 1:
        raise InputError(f"expected windows of one subject, got {len(subjects)}")
    sid = str(next(iter(subjects)))
    p = np.empty((profiles.features.shape[1], N_LEVELS))
    for lvl in range(1, N_LEVELS + 1):
        m = profiles.level == lvl
        if not m.any():
            raise InputError(f"subject {sid} has no profile window at level {lvl}")
        p[:, lvl - 1] = profiles.features[m].mean(axis=0)
    return SubjectDescriptor(sid, p, normalize_levels(p))


def build_descriptors(profiles: ProfileSet):
    """Descriptors for every subject, in first-appearance order.

    Returns ``(descriptors, excluded)`` where ``excluded`` maps subject ids
    to the reason they were left out.
    """
    order = list(dict.fromkeys(profiles.subject.tolist()))
    out, excluded = [], {}
    for sid in order:
        try:
            out.append(build_descriptor(profiles, sid))
        except InputError as exc:
            log.warning("excluding subject %s: %s", sid, exc)
            excluded[sid] = str(exc)
    return out, excluded


def descriptor_matrix(descriptors):
    return np.array([d.vector for d in descriptors]).reshape(len(descriptors), DESCRIPTOR_DIM)

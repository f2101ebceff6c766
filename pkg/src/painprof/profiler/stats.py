"""Demographic composition of clusters."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from painprof.errors import InputError

ALPHA = 0.05


@dataclass
class ClusterStats:
    cluster: int
    size: int
    pct_cohort: float
    pct_male: float
    pct_female: float
    age_mean: float
    age_sd: float  # sample SD (ddof=1); NaN for a single subject
    t: float | None = None
    p: float | None = None
    significant: bool = False
    note: str = ""

    def to_dict(self):
        return asdict(self)


def welch_ttest(a, b):
    """Two-tail Welch t-test, with the zero-variance cases made explicit."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.var() == 0 and b.var() == 0:
        if a.mean() == b.mean():
            return 0.0, 1.0
        return float(np.copysign(np.inf, a.mean() - b.mean())), 0.0
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def cluster_statistics(assignments, demographics, alpha=ALPHA):
    """Size, gender split and age of each cluster, with a Welch t-test of
    the cluster's ages against all other clustered subjects.

    ``assignments`` maps subject id to cluster; ``demographics`` maps subject
    id to ``{"age": float, "gender": "M" | "F"}``.
    """
    missing = [s for s in assignments if s not in demographics]
    if missing:
        raise InputError(f"no demographics for {', '.join(map(str, missing))}")
    sids = list(assignments)
    lab = np.array([assignments[s] for s in sids])
    age = np.array([float(demographics[s]["age"]) for s in sids])
    male = np.array([demographics[s]["gender"] == "M" for s in sids])
    rows = []
    for k in sorted(set(lab.tolist())):
        m = lab == k
        n = int(m.sum())
        row = ClusterStats(
            cluster=int(k),
            size=n,
            pct_cohort=100.0 * n / len(sids),
            pct_male=100.0 * male[m].mean(),
            pct_female=100.0 * (1 - male[m].mean()),
            age_mean=float(age[m].mean()),
            age_sd=float(age[m].std(ddof=1)) if n > 1 else float("nan"),
        )
        rest = age[~m]
        if rest.size == 0:
            row.note = "single cluster; no comparison group"
        elif n < 2 or rest.size < 2:
            row.note = "t-test skipped: fewer than 2 subjects in a group"
        else:
            row.t, row.p = welch_ttest(age[m], rest)
            row.significant = row.p <= alpha
        rows.append(row)
    return rows


def format_cluster_table(rows):
    head = f"{'cluster':>7} {'n':>4} {'%cohort':>8} {'%male':>6} {'%female':>8} {'age':>14} {'t':>8} {'p':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        age = f"{r.age_mean:.1f} ({r.age_sd:.1f})" if np.isfinite(r.age_sd) else f"{r.age_mean:.1f} (-)"
        t = f"{r.t:8.3f}" if r.t is not None else f"{'-':>8}"
        p = f"{r.p:8.4f}" if r.p is not None else f"{'-':>8}"
        mark = " *" if r.significant else ""
        lines.append(
            f"{r.cluster:>7} {r.size:>4} {r.pct_cohort:8.1f} {r.pct_male:6.1f} {r.pct_female:8.1f} "
            f"{age:>14} {t} {p}{mark}"
        )
    lines.append(f"* age differs from the other clusters at p <= {ALPHA}")
    return "\n".join(lines)

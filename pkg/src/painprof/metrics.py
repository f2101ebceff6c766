"""Regression metrics, ICC(3,1), paired t-tests and Table-style reports."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from painprof.errors import InputError


def mae_rmse(preds, targets):
    p = np.asarray(preds, dtype=float).reshape(-1)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if p.size == 0 or p.size != y.size:
        raise InputError(f"need equal nonzero lengths, got {p.size} and {y.size}")
    r = p - y
    return float(np.abs(r).mean()), float(np.sqrt((r * r).mean()))


def icc31(ratings):
    """Shrout-Fleiss ICC(3,1): (BMS - EMS) / (BMS + (k - 1) EMS).

    ``ratings`` is (n targets, k raters).  Returns NaN when the targets do
    not vary (the coefficient is undefined).
    """
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise InputError(f"need an (n >= 3, k >= 2) table, got shape {x.shape}")
    n, k = x.shape
    grand = x.mean()
    row = x.mean(axis=1, keepdims=True)
    col = x.mean(axis=0, keepdims=True)
    ss_rows = k * float(((row - grand) ** 2).sum())
    resid = x - row - col + grand
    ss_err = float((resid * resid).sum())
    if ss_rows == 0.0:
        return float("nan")
    bms = ss_rows / (n - 1)
    ems = ss_err / ((n - 1) * (k - 1))
    return float((bms - ems) / (bms + (k - 1) * ems))


def t_sf_two_tail(t, df):
    """Two-tail p-value of Student's t via the regularised incomplete beta."""
    if np.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_two_tail_ttest(errors_a, errors_b):
    """Paired t-test on matched samples; returns (t, two-tail p)."""
    a = np.asarray(errors_a, dtype=float).reshape(-1)
    b = np.asarray(errors_b, dtype=float).reshape(-1)
    if a.size != b.size or a.size < 2:
        raise InputError(f"need two paired samples of length >= 2, got {a.size} and {b.size}")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, mean)), 0.0
    t = mean / (sd / np.sqrt(n))
    return float(t), t_sf_two_tail(t, n - 1)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    scope: str  # "overall" or "cluster <k>"
    mae: float
    rmse: float
    icc31: float
    n_windows: int
    icc31_subject_mean: float = float("nan")
    significance: dict | None = None  # {"t", "p", "vs"}

    def to_dict(self):
        return asdict(self)


def _subject_icc(pred, true, subject):
    vals = []
    for s in dict.fromkeys(subject.tolist()):
        m = subject == s
        if m.sum() >= 3:
            v = icc31(np.column_stack([pred[m], true[m]]))
            if np.isfinite(v):
                vals.append(v)
    return float(np.mean(vals)) if vals else float("nan")


def evaluate_predictions(preds, scope="overall"):
    """Pooled metrics over all windows plus the mean of per-subject ICCs."""
    if len(preds) == 0:
        raise InputError(f"no windows to evaluate for scope {scope!r}")
    mae, rmse = mae_rmse(preds.y_pred, preds.y_true)
    icc = icc31(np.column_stack([preds.y_pred, preds.y_true])) if len(preds) >= 3 else float("nan")
    return EvalReport(scope, mae, rmse, icc, len(preds),
                      _subject_icc(preds.y_pred, preds.y_true, np.asarray(preds.subject)))


def evaluate_by_cluster(preds):
    """Overall report followed by one report per cluster."""
    rows = [evaluate_predictions(preds, "overall")]
    for k in sorted(set(np.asarray(preds.cluster).tolist())):
        rows.append(evaluate_predictions(preds.subset(preds.cluster == k), f"cluster {k}"))
    return rows


def compare(preds_a, preds_b, name_b):
    """Paired t-test of per-window absolute errors of two models on the same windows."""
    if len(preds_a) != len(preds_b) or not np.array_equal(preds_a.y_true, preds_b.y_true) \
            or not np.array_equal(np.asarray(preds_a.t0), np.asarray(preds_b.t0)):
        raise InputError("predictions must cover identical windows in identical order")
    t, p = paired_two_tail_ttest(np.abs(preds_a.y_pred - preds_a.y_true),
                                 np.abs(preds_b.y_pred - preds_b.y_true))
    return {"t": t, "p": p, "vs": name_b}


@dataclass
class Table:
    """Rows of (label, EvalReport) mirroring a results table."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, label, report: EvalReport):
        self.rows.append((label, report))

    def to_dict(self):
        return {"rows": [{"label": lab, **r.to_dict()} for lab, r in self.rows], **self.meta}

    def to_text(self):
        head = f"{'model':<28} {'MAE':>7} {'RMSE':>7} {'ICC':>7} {'ICC(subj)':>9} {'n':>7}  significance"
        lines = [head, "-" * len(head)]
        for lab, r in self.rows:
            sig = ""
            if r.significance:
                s = r.significance
                sig = f"t={s['t']:.3f} p={s['p']:.4g} vs {s['vs']}"
            lines.append(f"{lab:<28} {r.mae:7.3f} {r.rmse:7.3f} {r.icc31:7.3f} "
                         f"{r.icc31_subject_mean:9.3f} {r.n_windows:7d}  {sig}".rstrip())
        return "\n".join(lines) + "\n"


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_report(table: Table, json_path, text_path=None, comment=""):
    Path(json_path).write_text(json.dumps(_json_safe(table.to_dict()), indent=2, sort_keys=True) + "\n")
    if text_path is not None:
        text = table.to_text()
        if comment:
            text = "".join(f"# {line}\n" for line in comment.splitlines()) + text
        Path(text_path).write_text(text)

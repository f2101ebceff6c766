"""Similarity heatmap (SVG) and on-disk formats for clustering results."""
from __future__ import annotations

import json
from html import escape
from pathlib import Path

import numpy as np

from painprof.errors import MissingArtifactError

# viridis anchors at 0, 1/8, ..., 1
_VIRIDIS = np.array([
    [68, 1, 84], [71, 44, 122], [59, 81, 139], [44, 113, 142], [33, 144, 141],
    [39, 173, 129], [92, 200, 99], [170, 220, 50], [253, 231, 37],
], dtype=float)


def viridis(x):
    """RGB hex colour for x in [0, 1] (yellow = high)."""
    x = float(np.clip(x, 0.0, 1.0)) * (len(_VIRIDIS) - 1)
    i = min(int(x), len(_VIRIDIS) - 2)
    rgb = _VIRIDIS[i] + (x - i) * (_VIRIDIS[i + 1] - _VIRIDIS[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in rgb)


def heatmap_order(W, labels):
    """Subjects grouped by cluster; within a cluster the medoid comes first,
    then the rest by decreasing similarity to it."""
    W = np.asarray(W)
    labels = np.asarray(labels)
    order = []
    for k in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == k)
        sub = W[np.ix_(idx, idx)]
        medoid = idx[np.argmax(sub.sum(axis=1))]
        sim = W[medoid, idx]
        order.extend(idx[np.lexsort((idx, -sim))].tolist())
    return np.array(order, dtype=int)


def heatmap_svg(W, labels, subject_ids, cell=10, comment=""):
    W = np.asarray(W)
    order = heatmap_order(W, labels)
    Wo = W[np.ix_(order, order)]
    lo, hi = float(Wo.min()), float(Wo.max())
    span = hi - lo if hi > lo else 1.0
    n = len(order)
    margin = 60
    size = margin + n * cell + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">']
    if comment:
        out.append(f"<!-- {escape(comment)} -->")
    out.append(f'<title>cluster-ordered similarity, range {lo:.4f}..{hi:.4f}</title>')
    for i in range(n):
        for j in range(n):
            out.append(
                f'<rect x="{margin + j * cell}" y="{margin + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{viridis((Wo[i, j] - lo) / span)}"/>'
            )
    font = max(cell - 2, 4)
    for i, k in enumerate(order):
        label = escape(str(subject_ids[k]))
        out.append(f'<text x="{margin - 2}" y="{margin + (i + 0.8) * cell}" font-size="{font}" '
                   f'text-anchor="end">{label}</text>')
        out.append(f'<text x="{margin + (i + 0.8) * cell}" y="{margin - 2}" font-size="{font}" '
                   f'transform="rotate(-90 {margin + (i + 0.8) * cell} {margin - 2})">{label}</text>')
    # cluster blocks
    lab = np.asarray(labels)[order]
    start = 0
    for i in range(1, n + 1):
        if i == n or lab[i] != lab[start]:
            w = (i - start) * cell
            out.append(f'<rect x="{margin + start * cell}" y="{margin + start * cell}" width="{w}" '
                       f'height="{w}" fill="none" stroke="red" stroke-width="1.5"/>')
            start = i
    out.append("</svg>")
    return "\n".join(out) + "\n"


def assignments_doc(model, provenance=None):
    return {
        "gamma": model.gamma,
        "c": model.c,
        "seed": model.seed,
        "assignments": model.assignments,
        "eigenvalues": [float(v) for v in model.eigenvalues],
        **(provenance or {}),
    }


def save_assignments(model, path, provenance=None, extra=None):
    doc = assignments_doc(model, provenance)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_assignments(path):
    """Subject id -> cluster mapping plus the full document."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"cluster assignments not found: {path} (run `profile` first)")
    doc = json.loads(path.read_text())
    return {str(k): int(v) for k, v in doc["assignments"].items()}, doc


def save_similarity_csv(W, subject_ids, path, header_comment=""):
    lines = []
    if header_comment:
        lines.extend(f"# {line}" for line in header_comment.splitlines())
    lines.append(",".join(["subject"] + [str(s) for s in subject_ids]))
    for sid, row in zip(subject_ids, np.asarray(W)):
        lines.append(",".join([str(sid)] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")

"""Multi-task feed-forward regressor with one shared layer and per-profile heads.

Head k maps the shared ReLU layer through its own ReLU layer to a scalar:

    x1 = relu(M1 x0 + b1)        (shared)
    x2 = relu(M2_k x1 + b2_k)    (head k)
    y  = w_k . x2 + c_k

Training first fits a single head on everyone (phase 1), then copies that
head once per profile, freezes the shared layer and fine-tunes every head on
its own profile's subjects (phase 2).  Loss is the mean absolute error,
optimised with Adam; inverted dropout acts on both hidden layers during
training and early stopping watches validation MAE.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from painprof.dataset.model import WindowSet
from painprof.dataset.windows import balance_training_set
from painprof.errors import InputError, MissingArtifactError

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
HEAD_KEYS = ("M2", "b2", "w_out", "b_out")
SHARED_KEYS = ("M1", "b1")


@dataclass(frozen=True)
class MtnnConfig:
    h1: int = 64
    h2: int = 32
    dropout: float = 0.2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    balance: bool = True


@dataclass
class MtnnModel:
    shared: dict  # M1 (h1, d), b1 (h1,)
    heads: list  # per head: M2 (h2, h1), b2 (h2,), w_out (h2,), b_out ()
    config: MtnnConfig = field(default_factory=MtnnConfig)
    mean: np.ndarray | None = None  # input standardisation
    scale: np.ndarray | None = None
    modality: str = "multimodal"
    assignments: dict = field(default_factory=dict)  # subject -> cluster (1-based)

    @property
    def n_inputs(self):
        return self.shared["M1"].shape[1]

    @property
    def c(self):
        return len(self.heads)

    def standardize(self, X):
        X = np.asarray(X, dtype=float)
        if self.mean is None:
            return X
        return (X - self.mean) / self.scale


def _he_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, (fan_out, fan_in))


def init_model(n_inputs, cfg: MtnnConfig = MtnnConfig(), n_heads=1, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    shared = {"M1": _he_uniform(rng, cfg.h1, n_inputs), "b1": np.zeros(cfg.h1)}
    heads = []
    for _ in range(n_heads):
        heads.append({
            "M2": _he_uniform(rng, cfg.h2, cfg.h1),
            "b2": np.zeros(cfg.h2),
            "w_out": _he_uniform(rng, 1, cfg.h2)[0] * np.sqrt(0.5),  # linear output: Glorot-like scale
            "b_out": np.array(0.0),
        })
    return MtnnModel(shared, heads, cfg)


def _check(model, head_id, X):
    if not 0 <= head_id < model.c:
        raise InputError(f"head {head_id} out of range for {model.c} heads")
    if X.shape[-1] != model.n_inputs:
        raise InputError(f"expected {model.n_inputs} input features, got {X.shape[-1]}")


def _dropout_mask(rng, shape, rate):
    if rate <= 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward(model, head_id, X0, masks=None):
    """Batch forward on standardised inputs; returns predictions and the cache."""
    s, h = model.shared, model.heads[head_id]
    z1 = X0 @ s["M1"].T + s["b1"]
    a1 = np.maximum(z1, 0.0)
    if masks is not None:
        a1 = a1 * masks[0]
    z2 = a1 @ h["M2"].T + h["b2"]
    a2 = np.maximum(z2, 0.0)
    if masks is not None:
        a2 = a2 * masks[1]
    y = a2 @ h["w_out"] + h["b_out"]
    return y, (X0, z1, a1, z2, a2)


def forward(model: MtnnModel, head_id, x, mode="eval", rng=None):
    """Prediction(s) for raw input(s) ``x`` of shape (d,) or (n, d).

    ``mode="train"`` applies inverted dropout using ``rng``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    _check(model, head_id, X)
    masks = None
    if mode == "train":
        rng = np.random.default_rng() if rng is None else rng
        cfg = model.config
        masks = (_dropout_mask(rng, (len(X), cfg.h1), cfg.dropout),
                 _dropout_mask(rng, (len(X), cfg.h2), cfg.dropout))
    elif mode != "eval":
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    y, _ = _forward(model, head_id, model.standardize(X), masks)
    return float(y[0]) if single else y


def _zero_grads(model):
    return {
        "shared": {k: np.zeros_like(v) for k, v in model.shared.items()},
        "heads": [{k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in h.items()} for h in model.heads],
    }


def backward(model: MtnnModel, head_id, X, y, masks=None, standardized=False):
    """MAE loss and its (sub)gradients for a batch routed to ``head_id``.

    The subgradient of |r| at r = 0 is taken as 0.  Parameters of other
    heads get zero gradients.  ``masks`` are the dropout multipliers of the
    two hidden layers (None: evaluation mode).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) == 0:
        raise InputError("empty batch")
    _check(model, head_id, X)
    X0 = X if standardized else model.standardize(X)
    pred, (X0, z1, a1, z2, a2) = _forward(model, head_id, X0, masks)
    r = pred - y
    loss = float(np.abs(r).mean())
    g_y = np.sign(r) / len(y)

    h = model.heads[head_id]
    grads = _zero_grads(model)
    gh = grads["heads"][head_id]
    gh["w_out"] = a2.T @ g_y
    gh["b_out"] = np.array(g_y.sum())
    g_a2 = np.outer(g_y, h["w_out"])
    if masks is not None:
        g_a2 = g_a2 * masks[1]
    g_z2 = g_a2 * (z2 > 0)
    gh["M2"] = g_z2.T @ a1
    gh["b2"] = g_z2.sum(axis=0)
    g_a1 = g_z2 @ h["M2"]
    if masks is not None:
        g_a1 = g_a1 * masks[0]
    g_z1 = g_a1 * (z1 > 0)
    grads["shared"]["M1"] = g_z1.T @ X0
    grads["shared"]["b1"] = g_z1.sum(axis=0)
    return loss, grads


class Adam:
    """Adam with bias-corrected moments over a dict of named arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
        self.v = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


# ---------------------------------------------------------------------------
# training


def _mae(model, head_id, X0, y):
    pred, _ = _forward(model, head_id, X0)
    return float(np.abs(pred - y).mean())


def _fit_head(model, head_id, X0, y, X0_val, y_val, rng, train_shared, phase, history):
    """Mini-batch Adam with early stopping on validation MAE; updates ``model`` in place."""
    cfg = model.config
    head = model.heads[head_id]
    params = {f"h.{k}": np.asarray(v, dtype=float) for k, v in head.items()}
    if train_shared:
        params.update({f"s.{k}": v for k, v in model.shared.items()})
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    def load(p):
        for k in HEAD_KEYS:
            head[k] = p[f"h.{k}"]
        if train_shared:
            for k in SHARED_KEYS:
                model.shared[k] = p[f"s.{k}"]

    best = _mae(model, head_id, X0_val, y_val)
    best_params = dict(params)
    history.append({"phase": phase, "head": head_id, "epoch": 0, "train_mae": None, "val_mae": best})
    wait = 0
    n = len(y)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = (_dropout_mask(rng, (len(idx), cfg.h1), cfg.dropout),
                     _dropout_mask(rng, (len(idx), cfg.h2), cfg.dropout))
            loss, grads = backward(model, head_id, X0[idx], y[idx], masks, standardized=True)
            total += loss * len(idx)
            flat = {f"h.{k}": grads["heads"][head_id][k] for k in HEAD_KEYS}
            if train_shared:
                flat.update({f"s.{k}": grads["shared"][k] for k in SHARED_KEYS})
            params = opt.step(params, flat)
            load(params)
        val = _mae(model, head_id, X0_val, y_val)
        history.append({"phase": phase, "head": head_id, "epoch": epoch,
                        "train_mae": total / n, "val_mae": val})
        if val < best:
            best, best_params, wait = val, dict(params), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    load(best_params)
    return best


def _standardizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 1e-12, scale, 1.0)


@dataclass
class TrainResult:
    model: MtnnModel  # phase-2 model with one head per cluster
    phase1: MtnnModel  # joint single-head model (the no-clustering baseline)
    history: list


def train(windows: WindowSet, assignments, cfg: MtnnConfig = MtnnConfig(), modality="multimodal",
          fine_tune=True):
    """Two-phase training on the train/val splits of ``windows``.

    ``assignments`` maps every training subject to a cluster 1..c.  With
    ``fine_tune=False`` only the joint phase runs and ``model`` is the
    phase-1 network.
    """
    train_ws = windows.where_split("train")
    val_ws = windows.where_split("val")
    if cfg.balance:
        train_ws = balance_training_set(train_ws, cfg.seed)
    if len(train_ws) == 0 or len(val_ws) == 0:
        raise InputError("training needs nonempty train and val splits")
    missing = sorted(set(train_ws.subject.tolist()) - set(assignments))
    if missing:
        raise InputError(f"training subjects without a cluster: {', '.join(missing[:5])}")
    c = max(assignments.values())

    X_tr = train_ws.features(modality)
    X_va = val_ws.features(modality)
    y_tr, y_va = train_ws.label.astype(float), val_ws.label.astype(float)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    model = init_model(X_tr.shape[1], cfg, 1, rng)
    model.mean, model.scale = _standardizer(X_tr)
    model.modality = modality
    X0_tr, X0_va = model.standardize(X_tr), model.standardize(X_va)

    history = []
    _fit_head(model, 0, X0_tr, y_tr, X0_va, y_va, rng, True, 1, history)
    phase1 = copy.deepcopy(model)
    phase1.assignments = {str(s): 1 for s in assignments}
    if not fine_tune:
        return TrainResult(phase1, phase1, history)

    model.heads = [copy.deepcopy(model.heads[0]) for _ in range(c)]
    model.assignments = {str(s): int(k) for s, k in assignments.items()}
    tr_cluster = np.array([assignments.get(s, 0) for s in train_ws.subject])
    va_cluster = np.array([assignments.get(s, 0) for s in val_ws.subject])
    for k in range(c):
        mt, mv = tr_cluster == k + 1, va_cluster == k + 1
        if not mt.any() or not mv.any():
            log.warning("profile %d has %d train / %d val windows; keeping the joint head",
                        k + 1, int(mt.sum()), int(mv.sum()))
            continue
        head_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, k]))
        _fit_head(model, k, X0_tr[mt], y_tr[mt], X0_va[mv], y_va[mv], head_rng, False, 2, history)
    return TrainResult(model, phase1, history)


# ---------------------------------------------------------------------------
# prediction


@dataclass
class Predictions:
    subject: np.ndarray
    cluster: np.ndarray
    t0: np.ndarray
    y_pred: np.ndarray
    y_true: np.ndarray

    def __len__(self):
        return len(self.y_true)

    def subset(self, mask):
        return Predictions(self.subject[mask], self.cluster[mask], self.t0[mask],
                           self.y_pred[mask], self.y_true[mask])


def predict_dataset(model: MtnnModel, windows: WindowSet, assignments=None):
    """Route every window to its subject's head."""
    assignments = model.assignments if assignments is None else assignments
    missing = sorted(set(windows.subject.tolist()) - set(assignments))
    if missing:
        raise InputError(f"no cluster assignment for subject(s) {', '.join(missing[:5])}")
    cluster = np.array([assignments[s] for s in windows.subject], dtype=int)
    if len(cluster) and (cluster.min() < 1 or cluster.max() > model.c):
        raise InputError(f"cluster ids must lie in 1..{model.c}")
    X0 = model.standardize(windows.features(model.modality))
    y = np.empty(len(windows))
    for k in np.unique(cluster):
        m = cluster == k
        y[m], _ = _forward(model, int(k) - 1, X0[m])
    return Predictions(windows.subject, cluster, windows.t0, y, windows.label.astype(float))


# ---------------------------------------------------------------------------
# persistence


def _list(a):
    a = np.asarray(a, dtype=float)
    return a.tolist()


def model_to_dict(model: MtnnModel):
    return {
        "format": "painprof-mtnn",
        "version": BUNDLE_VERSION,
        "config": asdict(model.config),
        "modality": model.modality,
        "n_inputs": model.n_inputs,
        "standardization": {"mean": _list(model.mean), "scale": _list(model.scale)}
        if model.mean is not None else None,
        "shared": {k: _list(v) for k, v in model.shared.items()},
        "heads": [{k: _list(v) for k, v in h.items()} for h in model.heads],
        "assignments": dict(sorted(model.assignments.items())),
    }


def model_from_dict(doc):
    if doc.get("format") != "painprof-mtnn":
        raise InputError("not a painprof model bundle")
    if doc.get("version") != BUNDLE_VERSION:
        raise InputError(f"unsupported model bundle version {doc.get('version')}")
    std = doc.get("standardization")
    return MtnnModel(
        shared={k: np.array(v) for k, v in doc["shared"].items()},
        heads=[{k: np.array(v) for k, v in h.items()} for h in doc["heads"]],
        config=MtnnConfig(**doc["config"]),
        mean=np.array(std["mean"]) if std else None,
        scale=np.array(std["scale"]) if std else None,
        modality=doc["modality"],
        assignments={str(k): int(v) for k, v in doc["assignments"].items()},
    )


def save_model(model: MtnnModel, path, provenance=None):
    doc = model_to_dict(model)
    if provenance:
        doc["provenance"] = provenance
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> MtnnModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"model bundle not found: {path} (run `train` first)")
    return model_from_dict(json.loads(path.read_text()))

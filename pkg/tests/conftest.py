import numpy as np
import pytest

from painprof import mtnn
from painprof.dataset.model import WindowSet
from painprof.dataset.synth import CohortSpec, generate_synthetic_cohort, neutral_face


@pytest.fixture(scope="session")
def small_cohort():
    """Three full-length synthetic recordings at reduced sampling rates."""
    spec = CohortSpec(n_subjects=3, n_profiles=3, noise=1.0, seed=11, fs=128.0, fps=10.0)
    return generate_synthetic_cohort(spec)


@pytest.fixture
def face():
    return neutral_face()


def toy_windows(n_subjects=6, per_subject=40, d_phys=10, d_vid=280, seed=0):
    """Random WindowSet with train/val/test thirds and labels 0..4."""
    rng = np.random.default_rng(seed)
    n = n_subjects * per_subject
    subject = np.repeat([f"S{i + 1:03d}" for i in range(n_subjects)], per_subject).astype(object)
    t0 = np.tile(np.arange(per_subject) * 0.5, n_subjects)
    split = np.tile(np.array(["train"] * (per_subject // 2) + ["val"] * (per_subject // 4)
                             + ["test"] * (per_subject - per_subject // 2 - per_subject // 4),
                             dtype=object), n_subjects)
    label = rng.integers(0, 5, n)
    physio = rng.normal(size=(n, d_phys)) + label[:, None] * 0.3
    video = rng.normal(size=(n, d_vid))
    return WindowSet(subject, t0, label, split, physio, video)


# central differences of an O(1) loss carry ~1e-11 of roundoff at eps = 1e-5;
# gradients below this floor are compared in absolute terms
GRAD_FLOOR = 1e-6


def flat_params(model, head):
    items = [("shared", k) for k in mtnn.SHARED_KEYS] + [("head", k) for k in mtnn.HEAD_KEYS]
    return [(kind, k, model.shared[k] if kind == "shared" else model.heads[head][k]) for kind, k in items]


def finite_difference_check(model, head, X, y, eps=1e-5):
    """Largest relative error of backward() against central differences."""
    _, grads = mtnn.backward(model, head, X, y)
    worst = 0.0
    for kind, key, arr in flat_params(model, head):
        g = grads["shared"][key] if kind == "shared" else grads["heads"][head][key]
        arr_f = arr.reshape(-1) if arr.ndim else None
        for i in range(arr.size):
            def loss_at(delta):
                if arr.ndim:
                    old = arr_f[i]
                    arr_f[i] = old + delta
                    out = mtnn.backward(model, head, X, y)[0]
                    arr_f[i] = old
                else:
                    tgt = model.heads[head]
                    old = tgt[key]
                    tgt[key] = np.array(float(old) + delta)
                    out = mtnn.backward(model, head, X, y)[0]
                    tgt[key] = old
                return out
            num = (loss_at(eps) - loss_at(-eps)) / (2 * eps)
            ana = float(np.asarray(g).reshape(-1)[i]) if arr.ndim else float(g)
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), GRAD_FLOOR))
    return worst


def away_from_kinks(model, head, X, y, margin=1e-3):
    X0 = model.standardize(X)
    s, h = model.shared, model.heads[head]
    z1 = X0 @ s["M1"].T + s["b1"]
    z2 = np.maximum(z1, 0) @ h["M2"].T + h["b2"]
    pred = np.maximum(z2, 0) @ h["w_out"] + h["b_out"]
    return (np.abs(z1).min() > margin and np.abs(z2).min() > margin
            and np.abs(pred - y).min() > margin)


# ---------------------------------------------------------------------------
# acceptance summary lines, printed at the end of the run

ACCEPTANCE = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)

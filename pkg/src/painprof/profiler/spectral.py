"""RBF similarity graph, normalised spectral embedding and k-means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from painprof.errors import EigenConvergenceError, InputError

DEFAULT_GAMMA = 0.18


def similarity_matrix(X, gamma=DEFAULT_GAMMA):
    """Fully connected RBF graph, w_ij = exp(-gamma * ||x_i - x_j||^2)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("descriptors must form an (M, d) matrix")
    diff = X[:, None, :] - X[None, :, :]
    W = np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 1.0)
    return W


def degrees(W):
    return np.asarray(W).sum(axis=1)


def random_walk_laplacian(W):
    """L = I - D^-1 W."""
    d = degrees(W)
    return np.eye(len(d)) - W / d[:, None]


def symmetric_laplacian(W):
    """L_sym = I - D^-1/2 W D^-1/2."""
    s = 1.0 / np.sqrt(degrees(W))
    L = np.eye(len(s)) - s[:, None] * W * s[None, :]
    return 0.5 * (L + L.T)


def jacobi_eigh(A, tol=1e-10, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Stops when the off-diagonal Frobenius norm falls below ``tol`` times the
    Frobenius norm of ``A``.  Returns ascending eigenvalues and the matching
    orthonormal eigenvectors as columns.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, atol=1e-12, rtol=0):
        raise InputError("jacobi_eigh needs a square symmetric matrix")
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)

    def off(M):
        return np.linalg.norm(M - np.diag(np.diag(M)))

    for _ in range(max_sweeps):
        if off(A) <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                diff = A[q, q] - A[p, p]
                if abs(apq) <= 1e-18 * abs(diff) or apq == 0.0:
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if off(A) > tol * scale:
            raise EigenConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off(A):.3e})"
            )
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _fix_sign(U):
    """Make the largest-magnitude entry of every column positive."""
    idx = np.argmax(np.abs(U), axis=0)
    return U * np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)


def spectral_embedding(W, c, tol=1e-10, max_sweeps=100):
    """First ``c`` eigenvectors of L = I - D^-1 W.

    Solved through the symmetric normalised Laplacian and mapped back with
    D^-1/2; columns are scaled to unit norm.  Returns (eigenvalues, U).
    """
    s = 1.0 / np.sqrt(degrees(W))
    vals, vecs = jacobi_eigh(symmetric_laplacian(W), tol, max_sweeps)
    U = s[:, None] * vecs
    U /= np.linalg.norm(U, axis=0, keepdims=True)
    return vals, _fix_sign(U)[:, :c]


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    labels: np.ndarray  # 0-based
    centers: np.ndarray
    inertia: float
    history: list  # inertia after every Lloyd iteration of the winning restart


def _assign(X, centers):
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(d, axis=1)  # first (lowest) index on ties
    return labels, d[np.arange(len(X)), labels]


def _kmeanspp(X, k, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _repair(X, labels, dist, centers):
    """Reseed empty clusters from the point farthest from its centre.

    Only points whose cluster keeps other members are eligible, so one
    repair never empties another cluster.
    """
    k = len(centers)
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        cand = np.where(sizes[labels] > 1, dist, -1.0)
        far = int(np.argmax(cand))
        centers[j] = X[far]
        labels[far] = j
        dist[far] = 0.0


def _lloyd(X, centers, max_iter, tol):
    history = []
    labels, dist = _assign(X, centers)
    _repair(X, labels, dist, centers)
    for _ in range(max_iter):
        new = np.array([X[labels == j].mean(axis=0) for j in range(len(centers))])
        labels, dist = _assign(X, new)
        _repair(X, labels, dist, new)
        shift = np.abs(new - centers).max()
        centers = new
        history.append(float(dist.sum()))
        if shift <= tol:
            break
    return labels, centers, float(dist.sum()), history


def kmeans(X, k, seed=0, n_init=10, max_iter=300, tol=1e-12):
    """k-means++ seeded Lloyd iterations; the lowest-inertia restart wins.

    Restart ``r`` uses a generator spawned from ``seed``, so results do not
    depend on how restarts are scheduled.
    """
    X = np.asarray(X, dtype=float)
    if k < 1 or k > len(X):
        raise InputError(f"k must lie in 1..{len(X)}, got {k}")
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(n_init, 1)):
        rng = np.random.default_rng(child)
        labels, centers, inertia, hist = _lloyd(X, _kmeanspp(X, k, rng), max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, hist)
    return best


def canonical_labels(labels):
    """Relabel 0-based clusters 1..c in order of first appearance."""
    mapping = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping) + 1)
    return np.array([mapping[int(lab)] for lab in labels])


# ---------------------------------------------------------------------------


@dataclass
class SpectralModel:
    W: np.ndarray
    degrees: np.ndarray
    eigenvalues: np.ndarray  # full spectrum of L, ascending
    embedding: np.ndarray  # (M, c)
    labels: np.ndarray  # cluster ids 1..c per row of W
    gamma: float | None
    c: int
    seed: int
    subject_ids: tuple = ()

    @property
    def assignments(self):
        ids = self.subject_ids or tuple(str(i) for i in range(len(self.labels)))
        return {sid: int(lab) for sid, lab in zip(ids, self.labels)}


def spectral_cluster(W, c, seed=0, n_init=10, subject_ids=(), gamma=None, tol=1e-10, max_sweeps=100):
    """Normalised spectral clustering (Shi and Malik) of a similarity matrix."""
    W = np.asarray(W, dtype=float)
    M = W.shape[0]
    if c < 1 or c > M:
        raise InputError(f"c must lie in 1..{M}, got {c}")
    if not np.allclose(W, W.T, atol=1e-12) or np.any(W < 0):
        raise InputError("W must be symmetric and non-negative")
    d = degrees(W)
    if np.any(d <= 0):
        raise InputError("every node needs a positive degree")
    vals, U = spectral_embedding(W, c, tol, max_sweeps)
    if c == 1:
        labels = np.ones(M, dtype=int)
    else:
        labels = canonical_labels(kmeans(U, c, seed=seed, n_init=n_init).labels)
    return SpectralModel(W, d, vals, U, labels, gamma, c, seed, tuple(subject_ids))

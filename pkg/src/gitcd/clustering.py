"""Self-optimizing clustering head.

K-means gives hard assignments and centers; a Student-t style kernel with a
trainable temperature gives soft assignments ``Q``; squaring and
frequency-normalizing ``Q`` gives the sharpened target ``P``. Two training
signals come out of it: KL(P || Q) and the negative mean silhouette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-6,
    history: list | None = None,
    n_init: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the relative center movement drops below ``tol`` or after
    ``max_iter`` iterations. An empty cluster is re-seeded at the point
    farthest from its current center. With ``n_init > 1`` the run with the
    lowest objective is kept. When ``history`` is given, the objective after
    every assignment step of the first run is appended to it.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n_init < 1:
        raise ValueError("k and n_init must be positive")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    best = None
    for r in range(n_init):
        centers, labels = _lloyd(x, k, rng, max_iter, tol, history if r == 0 else None)
        cost = float(((x - centers[labels]) ** 2).sum())
        if best is None or cost < best[0]:
            best = (cost, centers, labels)
    return best[1], best[2]


def _lloyd(x, k, rng, max_iter, tol, history):
    n = x.shape[0]

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=closest / total)
        centers[j] = x[idx]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        labels = d2.argmin(axis=1)
        best = d2[np.arange(n), labels]
        if history is not None:
            history.append(float(best.sum()))
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                far = int(best.argmax())
                new[j] = x[far]
                best[far] = 0.0
        shift = np.linalg.norm(new - centers) / max(np.linalg.norm(centers), 1e-12)
        centers = new
        if shift < tol:
            break
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = d2.argmin(axis=1)
    return centers, labels


@dataclass
class SoftClusterState:
    centers: np.ndarray
    t_raw: np.ndarray  # unconstrained, temperature = softplus(t_raw)
    eps: float = 1e-8

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])

    @property
    def temperature(self) -> float:
        return float(np.logaddexp(0.0, self.t_raw).reshape(-1)[0])

    @staticmethod
    def raw_from_temperature(t: float) -> np.ndarray:
        if t <= 0:
            raise ValueError("temperature must be positive")
        return np.array([t + math.log(-math.expm1(-t))])


def temperature(t_raw) -> Tensor:
    return ad.softplus(t_raw)


def soft_assign(x, centers: np.ndarray, t) -> Tensor:
    """Row-normalized 1 / (1 + ||x_i - c_j||^2 / t). Centers are treated as constants."""
    x = ad.as_tensor(x)
    t = ad.as_tensor(t, like=x)
    if np.any(t.data <= 0):
        raise ContractError("temperature must be positive")
    d2 = ad.pairwise_sq_dist(x, Tensor(np.asarray(centers, dtype=x.dtype)))
    q = 1.0 / (1.0 + d2 / ad.reshape(t, (1, 1)))
    return q / ad.sum(q, axis=1, keepdims=True)


def target_distribution(q: np.ndarray) -> np.ndarray:
    """P_ij proportional to Q_ij^2 / f_j with f_j = sum_i Q_ij; empty clusters contribute 0."""
    q = np.asarray(q, dtype=np.float64)
    f = q.sum(axis=0)
    w = np.divide(q**2, f, out=np.zeros_like(q), where=f > 0)
    return w / w.sum(axis=1, keepdims=True)


def kl_clustering_loss(p: np.ndarray, q, eps: float = 1e-8, verbatim_sign: bool = False) -> Tensor:
    """(1/N) sum_ij P_ij log(P_ij / (Q_ij + eps)), with 0 log 0 = 0.

    ``verbatim_sign`` flips the sign, i.e. (1/N) sum P log((Q + eps) / P).
    """
    q = ad.as_tensor(q)
    p = np.asarray(p, dtype=q.dtype)
    n = q.shape[0]
    pos = p > 0
    entropy_part = float(np.sum(p[pos] * np.log(p[pos])))
    cross = ad.sum(ad.log(q + eps) * p)
    loss = (entropy_part - cross) * (1.0 / n)
    return -loss if verbatim_sign else loss


def silhouette_values(x, labels: np.ndarray) -> Tensor:
    """Per-point (b - a) / max(a, b) on Euclidean distances, labels held fixed.

    ``a`` excludes the point itself; points in singleton clusters and points
    with a = b = 0 get 0.
    """
    x = ad.as_tensor(x)
    labels = np.asarray(labels)
    present, inverse = np.unique(labels, return_inverse=True)
    m = present.size
    if m < 2:
        raise ContractError("silhouette needs at least two non-empty clusters")
    n = x.shape[0]
    onehot = np.eye(m, dtype=x.dtype)[inverse]
    sizes = onehot.sum(axis=0)

    dist = ad.sqrt(ad.pairwise_sq_dist(x, x))
    sums = ad.matmul(dist, Tensor(onehot))  # (n, m)
    rows = np.arange(n)
    own_size = sizes[inverse]
    a = sums[rows, inverse] / np.maximum(own_size - 1.0, 1.0).astype(x.dtype)

    mean_other = sums.data / sizes
    mean_other[rows, inverse] = np.inf
    nearest = mean_other.argmin(axis=1)
    b = sums[rows, nearest] / sizes[nearest].astype(x.dtype)

    denom = ad.where(a.data >= b.data, a, b)
    ok = (own_size > 1) & (denom.data > 0)
    safe = ad.where(ok, denom, np.ones(n, dtype=x.dtype))
    s = (b - a) / safe
    return ad.where(ok, s, np.zeros(n, dtype=x.dtype))


def silhouette_loss(s) -> Tensor:
    """Negative mean silhouette."""
    s = ad.as_tensor(s)
    if s.data.size == 0:
        raise ContractError("silhouette loss of an empty set")
    return -ad.mean(s)

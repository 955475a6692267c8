"""K-means (Lloyd) with D^2-weighted seeding, restarts, and arm-coverage repair."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import ContractError

DEFAULT_RESTARTS = 10
DEFAULT_MAX_RESEEDS = 10
MAX_LLOYD_ITER = 300
PRNG = "PCG64/SeedSequence v1"


@dataclass(frozen=True)
class Clustering:
    """Stratum labels ``0..K-1`` for each point plus fit diagnostics."""

    assignment: np.ndarray
    centroids: np.ndarray
    objective: float
    seed: int
    attempts: int
    reseeds: int = 0
    merged: bool = False
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ContractError("points must be an N x d matrix")
    if not np.all(np.isfinite(x)):
        raise ContractError("points must be finite")
    return x


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    if x.shape[1] == 1:
        return (x - c[:, 0]) ** 2
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _centroids(x, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts


def _objective(x, labels, centroids) -> float:
    return float(np.sum((x - centroids[labels]) ** 2))


def _seed_centroids(x, k, rng) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # fewer distinct points than K; empty-cluster repair handles the rest
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dist(x, x[[idx]])[:, 0])
    return x[chosen].copy()


@numba.njit(cache=True)
def _assign(x, c, labels):
    n, d = x.shape
    k = c.shape[0]
    for i in range(n):
        best, arg = np.inf, 0
        for j in range(k):
            s = 0.0
            for m in range(d):
                t = x[i, m] - c[j, m]
                s += t * t
            if s < best:
                best, arg = s, j
        labels[i] = arg


@numba.njit(cache=True)
def _update(x, labels, c, counts):
    n, d = x.shape
    c[:] = 0.0
    counts[:] = 0
    for i in range(n):
        counts[labels[i]] += 1
        for m in range(d):
            c[labels[i], m] += x[i, m]
    for j in range(c.shape[0]):
        if counts[j] > 0:
            for m in range(d):
                c[j, m] /= counts[j]


@numba.njit(cache=True)
def _sse(x, labels, c):
    s = 0.0
    for i in range(x.shape[0]):
        for m in range(x.shape[1]):
            t = x[i, m] - c[labels[i], m]
            s += t * t
    return s


@numba.njit(cache=True)
def _repair(x, labels, c, counts):
    # an empty cluster takes the point farthest from its centroid (among clusters with > 1 point)
    k = c.shape[0]
    for j in range(k):
        if counts[j] > 0:
            continue
        far, worst = -1, -1.0
        for i in range(x.shape[0]):
            if counts[labels[i]] < 2:
                continue
            s = 0.0
            for m in range(x.shape[1]):
                t = x[i, m] - c[labels[i], m]
                s += t * t
            if s > worst:
                worst, far = s, i
        if far < 0:
            break
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        c[j, :] = x[far, :]


@numba.njit(cache=True)
def _lloyd_core(x, init, max_iter, history):
    k = init.shape[0]
    n = x.shape[0]
    c = init.copy()
    labels = np.empty(n, dtype=np.int64)
    new = np.empty(n, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    _assign(x, c, labels)
    for i in range(n):
        counts[labels[i]] += 1
    _repair(x, labels, c, counts)
    used = 0
    for _ in range(max_iter):
        _update(x, labels, c, counts)
        history[used] = _sse(x, labels, c)
        used += 1
        _assign(x, c, new)
        counts[:] = 0
        for i in range(n):
            counts[new[i]] += 1
        _repair(x, new, c, counts)
        same = True
        for i in range(n):
            if new[i] != labels[i]:
                same = False
                break
        if same:
            break
        labels[:] = new
    _update(x, labels, c, counts)
    return labels, c, _sse(x, labels, c), used


def _lloyd(x, init, max_iter):
    history = np.empty(max_iter)
    labels, centroids, obj, used = _lloyd_core(np.ascontiguousarray(x), np.ascontiguousarray(init),
                                               max_iter, history)
    history = history[:used]
    if np.any(history[1:] > history[:-1] * (1 + 1e-12) + 1e-12):
        raise AssertionError("Lloyd objective increased")
    return labels, centroids, float(obj), history.tolist()


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stream])))


def kmeans(points, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS, max_iter: int = MAX_LLOYD_ITER) -> Clustering:
    """Best of ``restarts`` seeded Lloyd runs by within-cluster sum of squares.

    Ties in the objective go to the earliest restart; ties in the nearest
    centroid go to the lowest cluster index.
    """
    x = _as_points(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ContractError(f"need 1 <= K <= N, got K={k}, N={n}")
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        init = _seed_centroids(x, k, _rng(seed, r))
        labels, centroids, obj, hist = _lloyd(x, init, max_iter)
        if best is None or obj < best[2]:
            best = (labels, centroids, obj, hist)
    labels, centroids, obj, hist = best
    return Clustering(assignment=labels, centroids=centroids, objective=obj, seed=int(seed),
                      attempts=restarts, history=tuple(hist))


def deficient_strata(assignment, treatment, k, arms=None) -> list[int]:
    """Strata that lack at least one arm."""
    arms = np.unique(treatment) if arms is None else np.asarray(arms)
    present = np.zeros((k, len(arms)), dtype=bool)
    arm_pos = np.searchsorted(arms, treatment)
    present[assignment, arm_pos] = True
    return [int(s) for s in np.flatnonzero(~present.all(axis=1))]


def _merge_deficient(x, clustering: Clustering, treatment, arms) -> Clustering:
    labels = clustering.assignment.copy()
    alive = list(range(clustering.k))
    cents = {s: clustering.centroids[s].copy() for s in alive}
    while len(alive) > 1:
        k = max(alive) + 1
        bad = [s for s in deficient_strata(labels, treatment, k, arms) if s in alive]
        if not bad:
            break
        s = bad[0]
        others = [o for o in alive if o != s]
        target = min(others, key=lambda o: (float(np.sum((cents[o] - cents[s]) ** 2)), o))
        labels[labels == s] = target
        alive.remove(s)
        cents[target] = x[labels == target].mean(axis=0)
    # relabel contiguously in order of surviving ids
    remap = np.full(clustering.k, -1)
    remap[alive] = np.arange(len(alive))
    labels = remap[labels]
    centroids, _ = _centroids(x, labels, len(alive))
    return Clustering(assignment=labels, centroids=centroids, objective=_objective(x, labels, centroids),
                      seed=clustering.seed, attempts=clustering.attempts, reseeds=clustering.reseeds,
                      merged=True, history=clustering.history)


def strata_with_all_arms(points, k: int, treatment, seed: int = 0, max_reseeds: int = DEFAULT_MAX_RESEEDS,
                         restarts: int = DEFAULT_RESTARTS) -> Clustering:
    """K-means strata in which every stratum holds at least one unit of every arm.

    Re-runs with seeds ``seed + 1, seed + 2, ...`` up to ``max_reseeds`` times;
    if no run qualifies, the run with the fewest deficient strata is repaired by
    merging each deficient stratum into the one with the nearest centroid.
    """
    x = _as_points(points)
    treatment = np.asarray(treatment)
    arms = np.unique(treatment)
    best = None
    for r in range(max_reseeds + 1):
        c = kmeans(x, k, seed + r, restarts)
        c = Clustering(c.assignment, c.centroids, c.objective, c.seed, c.attempts, reseeds=r, history=c.history)
        bad = deficient_strata(c.assignment, treatment, c.k, arms)
        if not bad:
            return c
        if best is None or len(bad) < best[0]:
            best = (len(bad), c)
    return replace(_merge_deficient(x, best[1], treatment, arms), reseeds=max_reseeds)

"""K-means codebook for quantizing motion steps into discrete classes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitError, SamplingError

Array = np.ndarray


def _pairwise_sq(points: Array, centers: Array) -> Array:
    # (n, k) squared Euclidean distances
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_plus_plus(points: Array, k: int, rng: np.random.Generator) -> Array:
    """Distance-weighted seeding: each new center is drawn with probability
    proportional to the squared distance from the nearest chosen one."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0.0:
            # all remaining points coincide with a chosen center
            centers[i] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(points: Array, k: int, seed: int, max_iters: int = 300) -> tuple[Array, Array, int, float]:
    """Lloyd iterations from a k-means++ start.

    Stops when assignments no longer change or max_iters is hit. An emptied
    cluster is reseeded to the point farthest from its assigned center.
    Returns (centers, assignments, iterations_run, inertia).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise FitError(f"points must be 2-D, got shape {points.shape}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    distinct = np.unique(points, axis=0)
    if len(distinct) < k:
        raise FitError(f"need at least {k} distinct points, got {len(distinct)}")
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(points, k, rng)
    assign = np.full(len(points), -1, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = _pairwise_sq(points, centers)
        new_assign = d2.argmin(axis=1)
        nearest_d2 = d2[np.arange(len(points)), new_assign]
        for c in range(k):
            members = new_assign == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
            else:
                far = int(nearest_d2.argmax())
                centers[c] = points[far]
                new_assign[far] = c
                nearest_d2[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    d2 = _pairwise_sq(points, centers)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(points)), assign].sum())
    return centers, assign, iterations, inertia


@dataclass
class MotionCodebook:
    """Centroid table over (normalized) 2-D motion steps."""

    centroids: Array       # (k, 2)
    seed: int
    iterations_run: int
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)

    def quantize(self, steps: Array) -> Array:
        """Index of the nearest centroid for each step; ties pick the lowest index."""
        steps = np.asarray(steps, dtype=np.float64)
        single = steps.ndim == 1
        pts = steps[None, :] if single else steps.reshape(-1, steps.shape[-1])
        idx = _pairwise_sq(pts, self.centroids).argmin(axis=1)
        if single:
            return int(idx[0])
        return idx.reshape(steps.shape[:-1])

    def dequantize(self, indices) -> Array:
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self.k):
            raise ConfigError(f"class index out of range for k={self.k}")
        return self.centroids[idx]

    def sample(self, logits: Array, temperature: float, rng: np.random.Generator | None = None) -> int:
        """Draw a class from softmax(logits / temperature); temperature 0 is argmax."""
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (self.k,):
            raise SamplingError(f"logits shape {logits.shape} does not match k={self.k}")
        if not np.isfinite(logits).all():
            raise SamplingError("non-finite logits")
        if temperature < 0:
            raise SamplingError(f"temperature must be >= 0, got {temperature}")
        if temperature == 0.0:
            return int(logits.argmax())
        if rng is None:
            raise SamplingError("sampling with temperature > 0 needs a random generator")
        z = logits / temperature
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        return int(rng.choice(self.k, p=p))


def fit_codebook(steps: Array, k: int, seed: int, max_iters: int = 300) -> MotionCodebook:
    """Fit a codebook on (normalized) motion steps."""
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[1] != 2:
        raise FitError(f"expected (n, 2) steps, got shape {steps.shape}")
    centers, _, iterations, inertia = kmeans_fit(steps, k, seed, max_iters)
    return MotionCodebook(centroids=centers, seed=seed, iterations_run=iterations, inertia=inertia)

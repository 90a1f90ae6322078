"""Neighbor mining on distance profiles, jitter augmentation, DBSCAN and
quadruplet sampling for the conditional inpainting task."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientClusters, PoolTooSmall
from .geometry import manhattan_matrix

NOISE = -1


def augment(batch: np.ndarray, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Append one Gaussian-jittered copy of every row.

    Returns ``(pool, provenance)`` where ``provenance[i]`` is the original row
    that pool row ``i`` derives from.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(rng)
    batch = np.asarray(batch, dtype=np.float64)
    jitter = batch + rng.normal(0.0, 1.0, batch.shape) * sigma
    n = batch.shape[0]
    return np.concatenate([batch, jitter]), np.concatenate([np.arange(n), np.arange(n)])


@dataclass
class NeighborAssignment:
    positive: np.ndarray  # (P,)
    negatives: np.ndarray  # (P, M)


def mine_neighbors(profiles: np.ndarray, m: int = 20) -> NeighborAssignment:
    """Positive = Manhattan-nearest other profile, negatives = the ``m`` farthest.

    Ties go to the lower index in both cases.
    """
    profiles = np.asarray(profiles, dtype=np.float64)
    p = profiles.shape[0]
    if p < m + 2:
        raise PoolTooSmall(f"pool of {p} cannot provide a positive and {m} negatives")
    dist = manhattan_matrix(profiles)
    eye = np.eye(p, dtype=bool)
    positive = np.argmin(np.where(eye, np.inf, dist), axis=1)
    far = np.where(eye, -np.inf, dist)
    far[np.arange(p), positive] = -np.inf
    order = np.argsort(-far, axis=1, kind="stable")
    return NeighborAssignment(positive, order[:, :m])


def dbscan(points: np.ndarray, eps: float = 1.0, min_pts: int = 4) -> np.ndarray:
    """Density-based clustering with Euclidean neighborhoods.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are numbered in order of discovery while scanning
    points by index; a border point joins the first cluster that reaches it.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    neighbors = [np.flatnonzero(row <= eps * eps) for row in d2]
    core = np.array([nb.size >= min_pts for nb in neighbors], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    return labels


@dataclass(frozen=True)
class Quadruplet:
    x: int
    masked_patch: int
    x_sim: int
    x_diff: int


def sample_quadruplets(labels, n_quads: int, n_patches: int, rng) -> list[Quadruplet]:
    """Draw ``(x, masked patch, x_sim, x_diff)`` from a cluster labeling; noise is skipped."""
    rng = np.random.default_rng(rng)
    labels = np.asarray(labels, dtype=np.int64)
    clusters, counts = np.unique(labels[labels != NOISE], return_counts=True)
    if clusters.size < 2 or counts.max() < 2:
        raise InsufficientClusters("need two clusters, one of them with at least two members")
    members = {int(c): np.flatnonzero(labels == c) for c in clusters}
    anchors = np.flatnonzero(np.isin(labels, clusters[counts >= 2]))
    clustered = np.flatnonzero(labels != NOISE)
    out = []
    for _ in range(n_quads):
        x = int(anchors[rng.integers(anchors.size)])
        same = members[int(labels[x])]
        same = same[same != x]
        x_sim = int(same[rng.integers(same.size)])
        other = clustered[labels[clustered] != labels[x]]
        x_diff = int(other[rng.integers(other.size)])
        out.append(Quadruplet(x, int(rng.integers(n_patches)), x_sim, x_diff))
    return out

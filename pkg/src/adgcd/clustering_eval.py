"""Semi-supervised k-means with pinned samples, cluster-count estimation, and
Hungarian-matched All/Old/New accuracy."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BadK, EmptyRange, InconsistentPins, MissingLabels, NonSquare

log = logging.getLogger(__name__)


class PinOrigin(enum.IntEnum):
    SOURCE_LABEL = 0
    CONFIDENT_PSEUDO = 1


@dataclass
class PinSet:
    """Samples whose cluster is fixed: ``index[i]`` always goes to ``cluster[i]``."""

    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cluster: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        self.cluster = np.asarray(self.cluster, dtype=np.int64).reshape(-1)
        self.origin = np.asarray(self.origin, dtype=np.int64).reshape(-1)
        if not (self.index.size == self.cluster.size == self.origin.size):
            raise InconsistentPins("index, cluster and origin must have equal length")
        if np.unique(self.index).size != self.index.size:
            raise InconsistentPins("a sample is pinned more than once")

    def __len__(self) -> int:
        return self.index.size

    @classmethod
    def from_labels(cls, index, cluster, origin: PinOrigin = PinOrigin.SOURCE_LABEL) -> "PinSet":
        index = np.asarray(index, dtype=np.int64)
        return cls(index, cluster, np.full(index.size, int(origin)))

    def merge(self, other: "PinSet") -> "PinSet":
        return PinSet(
            np.concatenate([self.index, other.index]),
            np.concatenate([self.cluster, other.cluster]),
            np.concatenate([self.origin, other.origin]),
        )

    def subset(self, mask) -> "PinSet":
        return PinSet(self.index[mask], self.cluster[mask], self.origin[mask])


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    centers: np.ndarray
    k: int
    objective: float
    objective_trace: list[float]
    iterations: int


@dataclass
class GcdMetrics:
    all: float
    old: float
    new: float
    matching: dict[int, int]

    def as_dict(self) -> dict:
        return {"all": self.all, "old": self.old, "new": self.new, "matching": {str(k): v for k, v in sorted(self.matching.items())}}


# ---------------------------------------------------------------------------


def confident_pseudo_pins(embeddings, centers, threshold: float = 0.9, offset: int = 0) -> PinSet:
    """Pin row ``i`` to center ``k`` when its best cosine similarity reaches ``threshold``.

    ``offset`` is added to the returned sample indices (the rows' position in
    the pooled clustering input).
    """
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    c = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    cn = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-12)
    sims = zn @ cn.T
    best = np.argmax(sims, axis=1)
    ok = sims[np.arange(z.shape[0]), best] >= threshold
    return PinSet.from_labels(np.flatnonzero(ok) + offset, best[ok], PinOrigin.CONFIDENT_PSEUDO)


def kmeans_plus_plus(x: np.ndarray, n_new: int, rng, existing: np.ndarray | None = None) -> np.ndarray:
    """D^2 seeding of ``n_new`` centers, conditioned on ``existing`` centers."""
    rng = np.random.default_rng(rng)
    centers = [] if existing is None else list(existing)
    if n_new == 0:
        return np.zeros((0, x.shape[1]))
    out = []
    if not centers:
        first = x[rng.integers(x.shape[0])]
        out.append(first)
        centers.append(first)
    d2 = np.min(_sqdist(x, np.asarray(centers)), axis=1)
    while len(out) < n_new:
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(x.shape[0]))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, x.shape[0] - 1)
        out.append(x[idx])
        d2 = np.minimum(d2, _sqdist(x, x[idx][None, :])[:, 0])
    return np.asarray(out)


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = np.sum(x * x, axis=1)[:, None] + np.sum(c * c, axis=1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d, 0.0)


def _sqdist_exact(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences: the expanded form is not exact enough for monotone traces
    return np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=2)


def ss_kmeans(
    x,
    k: int,
    pins: PinSet | None = None,
    *,
    init_centers=None,
    rng=None,
    max_iter: int = 100,
    n_known: int | None = None,
) -> ClusteringResult:
    """Lloyd iterations in which pinned samples never change cluster.

    Centers of clusters that carry pins start at the mean of their pinned
    samples (or at ``init_centers`` rows, when given); the remaining centers
    are seeded by k-means++ over unpinned samples. An emptied cluster is
    reseeded at the sample farthest from its current center.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    pins = pins or PinSet()
    if k < 1 or k > max(n, 1):
        raise BadK(f"K={k} invalid for {n} samples")
    if n_known is not None and k < n_known:
        raise BadK(f"K={k} is below the number of known classes {n_known}")
    if len(pins) and (pins.cluster.min() < 0 or pins.cluster.max() >= k):
        raise InconsistentPins("pinned cluster ids must lie in [0, K)")
    if len(pins) and (pins.index.min() < 0 or pins.index.max() >= n):
        raise InconsistentPins("pinned sample index out of range")
    rng = np.random.default_rng(rng)

    pinned = np.zeros(n, dtype=bool)
    pinned[pins.index] = True
    pin_target = np.full(n, -1, dtype=np.int64)
    pin_target[pins.index] = pins.cluster

    centers = np.zeros((k, x.shape[1]))
    have = np.zeros(k, dtype=bool)
    if init_centers is not None:
        init = np.atleast_2d(np.asarray(init_centers, dtype=np.float64))
        if init.shape[0] > k:
            raise BadK("more initial centers than K")
        centers[: init.shape[0]] = init
        have[: init.shape[0]] = True
    for c in np.unique(pins.cluster):
        if not have[c]:
            centers[c] = x[pins.index[pins.cluster == c]].mean(axis=0)
            have[c] = True
    missing = np.flatnonzero(~have)
    if missing.size:
        pool = x[~pinned] if np.any(~pinned) else x
        centers[missing] = kmeans_plus_plus(pool, missing.size, rng, centers[have] if have.any() else None)

    assignment = np.zeros(n, dtype=np.int64)
    trace: list[float] = []
    updates = 0
    for it in range(1, max_iter + 1):
        d2 = _sqdist_exact(x, centers)
        new = np.argmin(d2, axis=1)
        new[pinned] = pin_target[pinned]
        assert np.array_equal(new[pins.index], pins.cluster)
        trace.append(float(d2[np.arange(n), new].sum()))
        if it > 1 and np.array_equal(new, assignment):
            break
        assignment = new
        updates += 1
        counts = np.bincount(assignment, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        for c in np.flatnonzero(~filled):
            dist = _sqdist_exact(x, centers)[np.arange(n), assignment]
            dist[pinned] = -1.0
            centers[c] = x[int(np.argmax(dist))]
    objective = trace[-1]
    return ClusteringResult(assignment, centers, k, objective, trace, updates)


# ---------------------------------------------------------------------------


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching on a square matrix.

    Returns ``(perm, total)`` with row ``i`` matched to column ``perm[i]``.
    Shortest augmenting paths with row/column potentials, O(n^3).
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"cost matrix must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix must be finite")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm, float(a[np.arange(n), perm].sum())


def gcd_accuracy(assignment, labels, known) -> GcdMetrics:
    """Accuracy under the single best cluster->class matching on the full set.

    Old/New are the matched fractions restricted to known / novel labels,
    under that same matching.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0 or np.any(labels < 0):
        raise MissingLabels("evaluation needs a label for every sample")
    if labels.shape != assignment.shape:
        raise ValueError("assignment and labels differ in length")
    clusters, a_idx = np.unique(assignment, return_inverse=True)
    classes, y_idx = np.unique(labels, return_inverse=True)
    size = max(clusters.size, classes.size)
    counts = np.zeros((size, size))
    np.add.at(counts, (a_idx, y_idx), 1.0)
    perm, _ = hungarian(-counts)
    pred = np.full(assignment.size, -1, dtype=np.int64)
    matching = {}
    for ci, yi in enumerate(perm[: clusters.size]):
        if yi < classes.size:
            matching[int(clusters[ci])] = int(classes[yi])
    for c, y in matching.items():
        pred[assignment == c] = y
    hit = pred == labels
    old = np.isin(labels, np.asarray(sorted(known), dtype=np.int64))
    new = ~old
    return GcdMetrics(
        all=float(hit.mean()),
        old=float(hit[old].mean()) if old.any() else float("nan"),
        new=float(hit[new].mean()) if new.any() else float("nan"),
        matching=matching,
    )


# ---------------------------------------------------------------------------
# Cluster-count estimation


def best_of(x, k: int, pins: PinSet | None, seeds, **kw) -> ClusteringResult:
    """Lowest-objective ss_kmeans result over several seeded initializations."""
    best = None
    for s in seeds:
        res = ss_kmeans(x, k, pins, rng=int(s), **kw)
        if best is None or res.objective < best.objective:
            best = res
    return best


def elbow_k(
    x, pins: PinSet, k_range: tuple[int, int], *, rng=0, n_known: int | None = None, n_init: int = 5, return_curve: bool = False
):
    """K with the largest discrete curvature of the log clustering objective.

    The sweep reaches one step past each end of ``k_range`` (where allowed) so
    that both endpoints can be selected. Each K keeps the best of ``n_init``
    initializations.
    """
    lo, hi = k_range
    floor = max(1, n_known or 1, int(pins.cluster.max()) + 1 if len(pins) else 1)
    ks = np.arange(max(lo - 1, floor), min(hi + 1, np.asarray(x).shape[0]) + 1)
    seeds = np.random.default_rng(rng).integers(2**32, size=n_init)
    obj = np.array([best_of(x, int(k), pins, seeds).objective for k in ks])
    inner = (ks >= lo) & (ks <= hi)
    if ks.size >= 3:
        logo = np.log(np.maximum(obj, 1e-300))
        second = np.full(ks.size, -np.inf)
        second[1:-1] = logo[:-2] - 2.0 * logo[1:-1] + logo[2:]
        second[~inner] = -np.inf
        best = int(ks[np.argmax(second)]) if np.isfinite(second).any() else lo
    else:
        best = lo
    return (best, ks, obj) if return_curve else best


def holdout_score_fn(x, pins: PinSet, *, holdout_frac: float = 0.5, rng=0, n_known: int | None = None, n_init: int = 5):
    """Accuracy on a hidden half of the source pins after clustering with ``k`` clusters.

    Returns ``score(k) -> float``. Source pins are split per cluster; the
    held-out share is unpinned and scored by Hungarian-matched accuracy. Each
    ``k`` keeps the best of ``n_init`` initializations.
    """
    rng = np.random.default_rng(rng)
    src = pins.origin == PinOrigin.SOURCE_LABEL
    if not src.any():
        raise MissingLabels("cluster-count estimation needs source-label pins")
    held = np.zeros(len(pins), dtype=bool)
    for c in np.unique(pins.cluster[src]):
        members = np.flatnonzero(src & (pins.cluster == c))
        take = rng.permutation(members)[: int(round(members.size * holdout_frac))]
        if take.size == members.size:
            take = take[:-1]
        held[take] = True
    kept = pins.subset(~held)
    h_idx, h_lab = pins.index[held], pins.cluster[held]
    seeds = rng.integers(2**32, size=n_init)

    def score(k: int) -> float:
        res = best_of(x, int(k), kept, seeds, n_known=n_known)
        return gcd_accuracy(res.assignment[h_idx], h_lab, known=np.unique(h_lab)).all

    return score


def brent_maximize(score, lo: int, hi: int, *, xatol: float = 0.5) -> tuple[int, dict[int, float]]:
    """Bounded Brent search for the maximum of an integer function.

    ``score`` is evaluated at ``round(k)`` and memoized per integer, plus at both
    end points and the integer neighbours of the winner; the best probed
    integer wins, ties going to the larger K. Brent is a local method:
    on a multimodal score it returns a local optimum of the probes.
    """
    cache: dict[int, float] = {}

    def neg(kf: float) -> float:
        k = int(np.clip(round(kf), lo, hi))
        if k not in cache:
            cache[k] = score(k)
        return -cache[k]

    if hi > lo:
        minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    # the bounded method never evaluates the end points themselves
    neg(lo)
    neg(hi)
    # rounding makes the objective piecewise constant, so finish with an
    # integer hill climb until the winner beats both neighbours
    while True:
        best = max(cache.items(), key=lambda kv: (kv[1], kv[0]))[0]
        fresh = [k for k in (best - 1, best + 1) if lo <= k <= hi and k not in cache]
        if not fresh:
            break
        for k in fresh:
            neg(k)
    return best, dict(sorted(cache.items()))


def brent_k(
    x,
    pins: PinSet,
    k_range: tuple[int, int],
    *,
    rng=0,
    n_known: int | None = None,
    n_init: int = 5,
    xatol: float = 0.5,
    return_probes: bool = False,
):
    """Maximize the held-out pin accuracy over K with :func:`brent_maximize`."""
    lo, hi = k_range
    score = holdout_score_fn(x, pins, rng=rng, n_known=n_known, n_init=n_init)
    best, probes = brent_maximize(score, lo, hi, xatol=xatol)
    return (best, probes) if return_probes else best


def estimate_k(
    x, pins: PinSet, k_range: tuple[int, int], method: str = "brent", *, rng=0, n_known: int | None = None, n_init: int = 5
) -> int:
    lo, hi = k_range
    if lo > hi or hi < 1:
        raise EmptyRange(f"empty K range [{lo}, {hi}]")
    if n_known is not None and lo < n_known:
        raise EmptyRange(f"K range must start at >= {n_known} known classes")
    if lo == hi:
        return int(lo)
    if method == "brent":
        return brent_k(x, pins, k_range, rng=rng, n_known=n_known, n_init=n_init)
    if method == "elbow":
        return elbow_k(x, pins, k_range, rng=rng, n_known=n_known, n_init=n_init)
    raise ValueError(f"unknown K estimation method {method!r}")

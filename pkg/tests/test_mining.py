from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgcd.dataio import SyntheticConfig, generate_synthetic
from adgcd.errors import InsufficientClusters, PoolTooSmall
from adgcd.geometry import PrototypeBank, compute_prototypes, distance_profile
from adgcd.mining import NOISE, augment, dbscan, mine_neighbors, sample_quadruplets

# -- reference implementations ---------------------------------------------


def brute_neighbors(profiles, m):
    p = len(profiles)
    pos, negs = [], []
    for a in range(p):
        dists = [(float(np.abs(profiles[a] - profiles[b]).sum()), b) for b in range(p)]
        cands = [(d, b) for d, b in dists if b != a]
        best = min(cands, key=lambda t: (t[0], t[1]))[1]
        rest = [(d, b) for d, b in cands if b != best]
        far = sorted(rest, key=lambda t: (-t[0], t[1]))[:m]
        pos.append(best)
        negs.append([b for _, b in far])
    return np.array(pos), np.array(negs)


def naive_dbscan(x, eps, min_pts):
    n = len(x)

    def region(i):
        return [j for j in range(n) if float(np.sum((x[i] - x[j]) ** 2)) <= eps * eps]

    labels = [None] * n
    c = -1
    for i in range(n):
        if labels[i] is not None:
            continue
        nb = region(i)
        if len(nb) < min_pts:
            labels[i] = NOISE
            continue
        c += 1
        labels[i] = c
        seeds = [j for j in nb if j != i]
        while seeds:
            q = seeds.pop(0)
            if labels[q] == NOISE:
                labels[q] = c
            if labels[q] is not None:
                continue
            labels[q] = c
            nq = region(q)
            if len(nq) >= min_pts:
                seeds.extend(nq)
    return np.array(labels)


def same_partition(a, b):
    """Equal up to relabeling of non-noise ids; noise must match exactly."""
    if not np.array_equal(a == NOISE, b == NOISE):
        return False
    fwd, back = {}, {}
    for u, v in zip(a, b):
        if u == NOISE:
            continue
        if fwd.setdefault(u, v) != v or back.setdefault(v, u) != u:
            return False
    return True


# -- augment ----------------------------------------------------------------


def test_augment_shapes_and_zero_sigma():
    x = np.arange(12.0).reshape(4, 3)
    pool, prov = augment(x, 0.0, 0)
    assert pool.shape == (8, 3)
    np.testing.assert_array_equal(pool[4:], x)
    assert prov.tolist() == [0, 1, 2, 3, 0, 1, 2, 3]
    with pytest.raises(ValueError):
        augment(x, -1.0, 0)


def test_jittered_copy_is_nearest_profile():
    # Monte Carlo over 1000 anchors on the synthetic generator, prototypes from
    # source class means in raw standardized feature space.
    cfg = SyntheticConfig(samples_per_class=150, seed=11)
    src, tgt = generate_synthetic(cfg)
    mu, sd = src.flat().mean(), src.flat().std()
    xs = (src.flat() - mu) / sd
    xt = (tgt.flat() - mu) / sd
    bank = compute_prototypes(xs, src.labels)
    rng = np.random.default_rng(0)
    anchors = xt[rng.choice(len(xt), 1000, replace=False)]
    hits = 0
    for chunk in np.array_split(np.arange(1000), 10):
        pool, _ = augment(anchors[chunk], 0.01, rng)
        prof = distance_profile(pool, bank)
        assign = mine_neighbors(prof, m=20)
        hits += int(np.sum(assign.positive[: chunk.size] == np.arange(chunk.size) + chunk.size))
    assert hits / 1000 >= 0.95


# -- mine_neighbors ----------------------------------------------------------


def test_mine_examples():
    prof = np.array([[1.0, 0.0], [0.9, 0.1], [0.1, 0.9], [0.5, 0.5]])
    assert mine_neighbors(prof, m=1).positive[0] == 1
    same = np.full((5, 2), 0.5)
    a = mine_neighbors(same, m=2)
    assert a.positive.tolist() == [1, 0, 0, 0, 0]
    assert a.negatives[0].tolist() == [2, 3]
    with pytest.raises(PoolTooSmall):
        mine_neighbors(prof, m=3)


@pytest.mark.parametrize("seed", range(20))
def test_mine_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(6, 60))
    m = int(rng.integers(1, p - 1))
    prof = rng.dirichlet(np.ones(4), size=p)
    if seed % 3 == 0:
        prof = np.round(prof, 1)  # force ties
    got = mine_neighbors(prof, m)
    pos, neg = brute_neighbors(prof, m)
    np.testing.assert_array_equal(got.positive, pos)
    np.testing.assert_array_equal(got.negatives, neg)
    for a in range(p):
        assert got.positive[a] != a and a not in got.negatives[a] and got.positive[a] not in got.negatives[a]


# -- dbscan -----------------------------------------------------------------


def test_dbscan_examples():
    rng = np.random.default_rng(0)
    blobs = np.vstack([rng.uniform(0, 0.3, (6, 2)), rng.uniform(0, 0.3, (6, 2)) + 10.0])
    labels = dbscan(blobs, eps=1.0, min_pts=4)
    assert labels.tolist() == [0] * 6 + [1] * 6
    assert dbscan(np.ones((5, 3)), 1.0, 4).tolist() == [0] * 5
    spread = np.arange(6.0)[:, None] * 5.0
    assert np.all(dbscan(spread, 1.0, 4) == NOISE)
    with pytest.raises(ValueError):
        dbscan(spread, 0.0, 4)


@pytest.mark.parametrize("seed", range(20))
def test_dbscan_matches_naive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 80))
    x = rng.normal(size=(n, 2)) * rng.uniform(0.5, 3.0)
    eps, min_pts = float(rng.uniform(0.3, 1.5)), int(rng.integers(1, 6))
    assert same_partition(dbscan(x, eps, min_pts), naive_dbscan(x, eps, min_pts))


def test_dbscan_core_structure_matches_sklearn():
    from sklearn.cluster import DBSCAN

    rng = np.random.default_rng(3)
    x = np.vstack([rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 4.0])
    ours = dbscan(x, 0.9, 4)
    ref = DBSCAN(eps=0.9, min_samples=4).fit(x)
    core = np.zeros(len(x), dtype=bool)
    core[ref.core_sample_indices_] = True
    # core points and noise agree exactly; border points may go to any adjacent cluster
    assert same_partition(np.where(core, ours, NOISE), np.where(core, ref.labels_, NOISE))
    assert np.array_equal(ours == NOISE, ref.labels_ == NOISE)


# -- quadruplets ------------------------------------------------------------


def test_quadruplet_forced_case():
    quads = sample_quadruplets([0, 0, 1], 20, 16, rng=0)
    for q in quads:
        assert {q.x, q.x_sim} == {0, 1} and q.x_diff == 2


def test_quadruplet_errors():
    with pytest.raises(InsufficientClusters):
        sample_quadruplets([0, 0, 0], 1, 4, 0)
    with pytest.raises(InsufficientClusters):
        sample_quadruplets([0, 1, NOISE], 1, 4, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1, 5), min_size=3, max_size=60), st.integers(0, 2**31))
def test_quadruplet_invariants(labels, seed):
    lab = np.array(labels)
    clusters, counts = np.unique(lab[lab != NOISE], return_counts=True)
    if clusters.size < 2 or counts.max() < 2:
        with pytest.raises(InsufficientClusters):
            sample_quadruplets(lab, 5, 16, seed)
        return
    quads = sample_quadruplets(lab, 1000, 16, seed)
    assert quads == sample_quadruplets(lab, 1000, 16, seed)
    for q in quads:
        assert lab[q.x] != NOISE and lab[q.x_diff] != NOISE
        assert lab[q.x] == lab[q.x_sim] != lab[q.x_diff]
        assert q.x != q.x_sim
        assert 0 <= q.masked_patch < 16


def test_masked_patch_roughly_uniform():
    quads = sample_quadruplets(np.repeat([0, 1], 10), 16000, 16, rng=1)
    counts = defaultdict(int)
    for q in quads:
        counts[q.masked_patch] += 1
    assert len(counts) == 16
    assert all(abs(c - 1000) < 150 for c in counts.values())


def test_bank_type_roundtrip():
    # profiles from a bank with a single class are constant; mining still works
    bank = PrototypeBank(np.array([[1.0, 0.0]]), (0,))
    prof = distance_profile(np.random.default_rng(0).normal(size=(4, 2)), bank)
    assert mine_neighbors(prof, m=2).positive[0] == 1

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adgcd.errors import EmptyClass, ShapeMismatch, ZeroVector
from adgcd.geometry import (
    PrototypeBank,
    compute_prototypes,
    cosine,
    distance_profile,
    entropy,
    manhattan,
    normalize_similarities,
)

E1, E2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])


def test_single_embedding_prototype():
    v = np.array([3.0, 4.0])
    bank = compute_prototypes(v[None, :], [5])
    np.testing.assert_allclose(bank.prototypes[0], v / 5.0)
    assert bank.classes == (5,)


def test_symmetric_pair_prototype():
    bank = compute_prototypes(np.array([E1 + E2, E1 - E2]), [0, 0])
    np.testing.assert_allclose(bank.prototypes[0], E1, atol=1e-15)


def test_prototypes_match_naive_mean():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(60, 5))
    labels = rng.integers(0, 4, size=60)
    bank = compute_prototypes(emb, labels, classes=(0, 1, 2, 3))
    for k in range(4):
        members = [emb[i] for i in range(60) if labels[i] == k]
        mean = sum(members) / len(members)
        np.testing.assert_allclose(bank.prototypes[k], mean / math.sqrt(sum(m * m for m in mean)), atol=1e-12)
        assert abs(np.linalg.norm(bank.prototypes[k]) - 1.0) <= 1e-9
    again = compute_prototypes(emb, labels, classes=(0, 1, 2, 3))
    np.testing.assert_array_equal(again.prototypes, bank.prototypes)


def test_empty_class():
    with pytest.raises(EmptyClass):
        compute_prototypes(np.ones((2, 2)), [0, 0], classes=(0, 1))


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(E1, E2) == pytest.approx(0.0)
    assert cosine(v, -v) == pytest.approx(-1.0)
    with pytest.raises(ZeroVector):
        cosine(np.zeros(2), E1)


def test_profile_of_prototype():
    bank = PrototypeBank(np.array([E1, E2]), (0, 1))
    p = distance_profile(E1, bank)
    e = math.e
    np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)], atol=1e-12)
    np.testing.assert_allclose(p, [0.7311, 0.2689], atol=1e-4)


def test_equidistant_profile_is_uniform():
    protos = np.eye(4)
    bank = PrototypeBank(protos, (0, 1, 2, 3))
    np.testing.assert_allclose(distance_profile(np.ones(4), bank), 0.25, atol=1e-15)


def test_softmax_shift_invariance():
    sims = np.array([0.1, -0.4, 0.9])
    np.testing.assert_allclose(normalize_similarities(sims), normalize_similarities(sims + 3.7), atol=1e-15)


def test_entropy_examples():
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    assert entropy([0.25] * 4) == pytest.approx(math.log(4))
    assert entropy([0.7311, 0.2689]) == pytest.approx(0.5822, abs=1e-4)


def test_manhattan_examples():
    assert manhattan([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert manhattan([1.0, 0.0], [0.0, 1.0]) == 2.0
    with pytest.raises(ShapeMismatch):
        manhattan([1.0], [0.5, 0.5])


def _simplex(k):
    return arrays(np.float64, k, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3).map(lambda a: a / a.sum())


@given(_simplex(5), _simplex(5), _simplex(5))
def test_manhattan_metric_properties(p, q, r):
    assert manhattan(p, q) == pytest.approx(manhattan(q, p))
    assert manhattan(p, r) <= manhattan(p, q) + manhattan(q, r) + 1e-12
    assert 0.0 <= manhattan(p, q) <= 2.0 + 1e-12


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 10_000), st.sampled_from(["softmax", "shifted_sum"]))
def test_profile_is_distribution(k, seed, mode):
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(k, 4))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    bank = PrototypeBank(protos, tuple(range(k)))
    p = distance_profile(rng.normal(size=(7, 4)), bank, mode)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    h = entropy(p)
    assert np.all(h >= -1e-12) and np.all(h <= math.log(k) + 1e-12)

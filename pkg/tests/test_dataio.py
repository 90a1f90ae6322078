import struct

import numpy as np
import pytest
from hypothesis import given, settings
from sklearn.cluster import KMeans
from hypothesis import strategies as st

from adgcd import dataio
from adgcd.clustering_eval import gcd_accuracy
from adgcd.dataio import Dataset, Domain, SyntheticConfig, generate_synthetic, load_dataset, save_dataset, split_subsets
from adgcd.errors import InvalidConfig, MalformedHeader, MissingLabels, NonFiniteValue, ShapeMismatch, UnknownVersion


def _minimal_gcde(labels=(0, -1), meta=b'{"gcde.domains":"target","gcde.known_classes":"0"}'):
    n, p, d = len(labels), 1, 3
    head = struct.pack("<4sIIIIBI", b"GCDE", 1, n, p, d, 1, len(meta))
    feats = np.arange(n * p * d, dtype="<f4").tobytes()
    return head + meta + feats + np.asarray(labels, dtype="<i4").tobytes()


def test_minimal_gcde_file(tmp_path):
    f = tmp_path / "a.gcde"
    f.write_bytes(_minimal_gcde())
    ds = load_dataset(f)
    assert len(ds) == 2
    assert ds.labels.tolist() == [0, -1]
    assert int((ds.labels >= 0).sum()) == 1
    assert ds.features.shape == (2, 1, 3)


def test_empty_csv_is_malformed(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("f0,f1,label\n")
    with pytest.raises(MalformedHeader):
        load_dataset(f, "csv")
    f.write_text("")
    with pytest.raises(MalformedHeader):
        load_dataset(f, "csv")


def test_header_errors(tmp_path):
    f = tmp_path / "a.gcde"
    good = _minimal_gcde()
    f.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(MalformedHeader):
        load_dataset(f)
    f.write_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(UnknownVersion):
        load_dataset(f)
    f.write_bytes(good[:-2])
    with pytest.raises(ShapeMismatch):
        load_dataset(f)
    bad = bytearray(good)
    off = struct.calcsize("<4sIIIIBI") + len(b'{"gcde.domains":"target","gcde.known_classes":"0"}')
    bad[off : off + 4] = np.array([np.nan], dtype="<f4").tobytes()
    f.write_bytes(bytes(bad))
    with pytest.raises(NonFiniteValue):
        load_dataset(f)


def test_empty_metadata_and_unlabeled(tmp_path):
    ds = Dataset(np.zeros((3, 2, 2)), [-1, -1, -1], [1, 1, 1], (0, 1))
    raw = dataio.encode_gcde(ds)
    _, _, n, p, d, has_labels, meta_len = struct.unpack_from("<4sIIIIBI", raw)
    assert has_labels == 0
    # no user metadata: only the reserved keys are present
    meta = raw[struct.calcsize("<4sIIIIBI") :][:meta_len]
    assert meta == b'{"gcde.domains":"target","gcde.known_classes":"0,1"}'
    assert len(raw) == struct.calcsize("<4sIIIIBI") + meta_len + 4 * n * p * d
    f = tmp_path / "u.gcde"
    save_dataset(ds, f)
    assert load_dataset(f) == ds


def test_reserved_metadata_rejected():
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1, 1)), [0], [0], (0,), {"gcde.domains": "x"})


def test_source_must_be_labeled():
    with pytest.raises(MissingLabels):
        Dataset(np.zeros((1, 1, 1)), [-1], [0], (0,))


@st.composite
def datasets(draw):
    n = draw(st.integers(0, 6))
    p = draw(st.integers(1, 3))
    d = draw(st.integers(1, 4))
    feats = draw(st.lists(st.floats(-1e6, 1e6, width=32), min_size=n * p * d, max_size=n * p * d))
    domains = draw(st.lists(st.sampled_from([0, 1]), min_size=n, max_size=n))
    known = tuple(sorted(draw(st.sets(st.integers(0, 5), min_size=1, max_size=4))))
    labels = []
    for dom in domains:
        if dom == 0:
            labels.append(draw(st.sampled_from(known)))
        else:
            labels.append(draw(st.integers(-1, 9)))
    meta = draw(st.dictionaries(st.text(min_size=1, max_size=5).filter(lambda k: not k.startswith("gcde.")), st.text(max_size=8), max_size=3))
    return Dataset(np.asarray(feats, dtype=np.float32).reshape(n, p, d), labels, domains, known, meta)


@settings(max_examples=150, deadline=None)
@given(datasets())
def test_roundtrip_bytes_and_fields(ds):
    raw = dataio.encode_gcde(ds)
    back = dataio.decode_gcde(raw)
    assert back == ds
    assert dataio.encode_gcde(back) == raw


def test_roundtrip_file(tmp_path):
    src, _ = generate_synthetic(SyntheticConfig(samples_per_class=5, seed=3))
    f = tmp_path / "s.gcde"
    save_dataset(src, f)
    assert load_dataset(f) == src
    assert dataio.encode_gcde(load_dataset(f)) == f.read_bytes()


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(5, 1, 3)), [0, 1, 0, 1, 1], [0] * 5, (0, 1))
    f = tmp_path / "x.csv"
    save_dataset(ds, f, "csv")
    assert f.read_text().splitlines()[0] == "f0,f1,f2,label"
    assert load_dataset(f, "csv", domain=Domain.SOURCE) == ds


def test_csv_rejects_patches(tmp_path):
    ds = Dataset(np.zeros((1, 2, 3)), [0], [0], (0,))
    with pytest.raises(ShapeMismatch):
        save_dataset(ds, tmp_path / "x.csv", "csv")


def test_synthetic_identity_shift_is_easy():
    cfg = SyntheticConfig(n_known=4, n_novel=3, rotation_deg=0.0, translation=0.0, scale=1.0, class_sep=8.0, seed=0)
    _, tgt = generate_synthetic(cfg)
    pred = KMeans(7, n_init=10, random_state=0).fit_predict(tgt.flat())
    assert gcd_accuracy(pred, tgt.labels, range(4)).all >= 0.95


def test_synthetic_no_novel():
    src, tgt = generate_synthetic(SyntheticConfig(n_novel=0, seed=1))
    assert set(tgt.labels.tolist()) <= set(src.labels.tolist())


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticConfig(seed=7, nuisance_rank=2, nuisance_std=3.0))
    b = generate_synthetic(SyntheticConfig(seed=7, nuisance_rank=2, nuisance_std=3.0))
    assert dataio.encode_gcde(a[0]) == dataio.encode_gcde(b[0])
    assert dataio.encode_gcde(a[1]) == dataio.encode_gcde(b[1])


def test_synthetic_structure():
    src, tgt = generate_synthetic(SyntheticConfig(seed=2))
    assert np.all(src.domains == 0) and np.all(tgt.domains == 1)
    assert set(src.labels.tolist()) == {0, 1, 2, 3}
    assert set(tgt.labels.tolist()) == set(range(7))
    assert src.features.shape == (400, 16, 16) and tgt.features.shape == (700, 16, 16)


def test_synthetic_means_follow_affine_map():
    cfg = SyntheticConfig(seed=4, samples_per_class=400, rotation_deg=30.0, translation=0.3, scale=1.2)
    src, tgt, means, shift = generate_synthetic(cfg, return_shift=True)
    n = cfg.samples_per_class
    tol = 3 * cfg.noise_std * cfg.scale / np.sqrt(n)
    for c in range(cfg.n_known + cfg.n_novel):
        expected = shift.apply(means[c])
        got = tgt.features[tgt.labels == c].astype(np.float64).mean(axis=0)
        # 3 sigma per coordinate, with a Bonferroni-sized cushion over 256 coordinates
        assert np.max(np.abs(got - expected)) <= 1.5 * tol
        if c < cfg.n_known:
            src_mean = src.features[src.labels == c].astype(np.float64).mean(axis=0)
            assert np.max(np.abs(src_mean - means[c])) <= 1.5 * tol / cfg.scale


def test_rotation_angle_is_exact():
    rot = dataio.plane_rotation(16, 30.0, np.random.default_rng(0))
    np.testing.assert_allclose(rot @ rot.T, np.eye(16), atol=1e-12)
    v = np.random.default_rng(1).normal(size=16)
    np.testing.assert_allclose(v @ rot @ v / (v @ v), np.cos(np.radians(30)), atol=1e-12)


def test_invalid_config():
    with pytest.raises(InvalidConfig):
        generate_synthetic(SyntheticConfig(n_known=0))
    with pytest.raises(InvalidConfig):
        generate_synthetic(SyntheticConfig(class_sep=0))


def test_split_subsets_examples():
    old, new = split_subsets(np.array([0, 1, 9]), {0, 1})
    assert old.tolist() == [0, 1] and new.tolist() == [2]
    old, new = split_subsets(np.array([1, 0, 1]), {0, 1})
    assert new.tolist() == []
    with pytest.raises(MissingLabels):
        split_subsets(np.array([0, -1]), {0})


@given(st.lists(st.integers(0, 9), max_size=50), st.sets(st.integers(0, 9)))
def test_split_subsets_partition(labels, known):
    old, new = split_subsets(np.array(labels, dtype=np.int64), known)
    assert sorted(old.tolist() + new.tolist()) == list(range(len(labels)))
    assert not set(old.tolist()) & set(new.tolist())
    assert all(labels[i] in known for i in old) and all(labels[i] not in known for i in new)

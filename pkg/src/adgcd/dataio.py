"""Datasets of patch-structured features, the GCDE file format, and a
synthetic cross-domain benchmark generator.

GCDE layout (all integers little-endian)::

    b"GCDE" | u32 version=1 | u32 n_samples | u32 n_patches | u32 patch_dim
    | u8 has_labels | u32 metadata_len | metadata (UTF-8)
    | f32 features, sample-major / patch-major / feature-minor
    | i32 labels (only when has_labels == 1)

Metadata is a canonical JSON object of string -> string (sorted keys, no
whitespace). Keys starting with ``gcde.`` are reserved for the domain tags and
the known-class set; everything else is user metadata.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidConfig,
    IoFailure,
    MalformedHeader,
    MissingLabels,
    NonFiniteValue,
    ShapeMismatch,
    UnknownVersion,
)

MAGIC = b"GCDE"
VERSION = 1
UNLABELED = -1
_HEADER = struct.Struct("<4sIIIIBI")

_KEY_DOMAINS = "gcde.domains"
_KEY_KNOWN = "gcde.known_classes"


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1


class FileFormat(str, enum.Enum):
    GCDE = "gcde"
    CSV = "csv"


@dataclass(frozen=True)
class Sample:
    patches: np.ndarray
    label: int
    domain: Domain


@dataclass(eq=False)
class Dataset:
    """A set of samples sharing one ``(n_patches, patch_dim)`` shape.

    ``features`` is stored as float32 (the on-disk precision); callers that
    train on it cast to float64 themselves.
    """

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    known_classes: tuple[int, ...]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 3:
            raise ShapeMismatch(f"features must be (n, n_patches, patch_dim), got {feats.shape}")
        n = feats.shape[0]
        if n > 0 and (feats.shape[1] < 1 or feats.shape[2] < 1):
            raise ShapeMismatch("n_patches and patch_dim must be >= 1")
        if not np.all(np.isfinite(feats)):
            raise NonFiniteValue("features contain NaN or Inf")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        domains = np.asarray(self.domains, dtype=np.uint8).reshape(-1)
        if labels.shape[0] != n or domains.shape[0] != n:
            raise ShapeMismatch("labels/domains length differs from number of samples")
        if np.any(labels < UNLABELED):
            raise ValueError("labels must be >= -1")
        if np.any(domains > 1):
            raise ValueError("unknown domain tag")
        known = tuple(sorted({int(k) for k in self.known_classes}))
        src = domains == Domain.SOURCE
        if np.any(labels[src] == UNLABELED):
            raise MissingLabels("source samples must all be labeled")
        if not set(np.unique(labels[src]).tolist()) <= set(known):
            raise ValueError("source labels must be a subset of known_classes")
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise TypeError("metadata must map str -> str")
            if k.startswith("gcde."):
                raise ValueError(f"metadata key {k!r} is reserved")
        self.features = feats
        self.labels = labels
        self.domains = domains
        self.known_classes = known
        self.metadata = dict(self.metadata)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]), Domain(int(self.domains[i])))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
            and self.known_classes == other.known_classes
            and self.metadata == other.metadata
        )

    @property
    def n_patches(self) -> int:
        return self.features.shape[1]

    @property
    def patch_dim(self) -> int:
        return self.features.shape[2]

    @property
    def has_labels(self) -> bool:
        return bool(np.any(self.labels != UNLABELED))

    def flat(self) -> np.ndarray:
        """Features as float64 ``(n, n_patches * patch_dim)``."""
        return self.features.reshape(len(self), -1).astype(np.float64)


# ---------------------------------------------------------------------------
# GCDE


def _encode_metadata(ds: Dataset) -> bytes:
    meta = dict(ds.metadata)
    doms = ds.domains
    if len(doms) and np.all(doms == Domain.SOURCE):
        meta[_KEY_DOMAINS] = "source"
    elif len(doms) and np.all(doms == Domain.TARGET):
        meta[_KEY_DOMAINS] = "target"
    else:
        meta[_KEY_DOMAINS] = "".join("S" if d == Domain.SOURCE else "T" for d in doms)
    meta[_KEY_KNOWN] = ",".join(str(k) for k in ds.known_classes)
    return _canonical_json(meta)


def _canonical_json(meta: dict[str, str]) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _decode_metadata(raw: bytes, n: int) -> tuple[dict[str, str], np.ndarray, tuple[int, ...]]:
    try:
        meta = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"metadata is not valid UTF-8 JSON: {exc}") from None
    if not isinstance(meta, dict) or not all(isinstance(v, str) for v in meta.values()):
        raise MalformedHeader("metadata must be a JSON object of strings")
    if _canonical_json(meta) != raw:
        raise MalformedHeader("metadata is not in canonical form")
    doms = meta.pop(_KEY_DOMAINS, None)
    known = meta.pop(_KEY_KNOWN, None)
    if doms is None or known is None:
        raise MalformedHeader("missing reserved metadata keys")
    if doms == "source" and n > 0:
        domains = np.zeros(n, dtype=np.uint8)
    elif doms == "target" and n > 0:
        domains = np.ones(n, dtype=np.uint8)
    else:
        if len(doms) != n or set(doms) - {"S", "T"}:
            raise MalformedHeader("bad domain tag string")
        if n > 0 and len(set(doms)) == 1:
            raise MalformedHeader("uniform domain tags must use the short form")
        domains = np.array([0 if c == "S" else 1 for c in doms], dtype=np.uint8)
    try:
        known_classes = tuple(int(k) for k in known.split(",")) if known else ()
    except ValueError:
        raise MalformedHeader("bad known_classes entry") from None
    if ",".join(str(k) for k in sorted(set(known_classes))) != known:
        raise MalformedHeader("known_classes must be sorted and unique")
    return meta, domains, known_classes


def encode_gcde(ds: Dataset) -> bytes:
    meta = _encode_metadata(ds)
    n, p, d = ds.features.shape if len(ds) else (0, ds.features.shape[1], ds.features.shape[2])
    has_labels = ds.has_labels
    parts = [
        _HEADER.pack(MAGIC, VERSION, n, p, d, int(has_labels), len(meta)),
        meta,
        ds.features.astype("<f4").tobytes(order="C"),
    ]
    if has_labels:
        parts.append(ds.labels.astype("<i4").tobytes())
    return b"".join(parts)


def decode_gcde(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise MalformedHeader("file shorter than header")
    magic, version, n, p, d, has_labels, meta_len = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnknownVersion(f"unsupported GCDE version {version}")
    if has_labels not in (0, 1):
        raise MalformedHeader("has_labels must be 0 or 1")
    if p < 1 or d < 1:
        raise ShapeMismatch("n_patches and patch_dim must be >= 1")
    off = _HEADER.size
    n_feat = n * p * d
    expected = off + meta_len + 4 * n_feat + (4 * n if has_labels else 0)
    if len(buf) != expected:
        raise ShapeMismatch(f"file size {len(buf)} does not match header ({expected})")
    meta, domains, known = _decode_metadata(buf[off : off + meta_len], n)
    off += meta_len
    feats = np.frombuffer(buf, dtype="<f4", count=n_feat, offset=off).reshape(n, p, d)
    off += 4 * n_feat
    if not np.all(np.isfinite(feats)):
        raise NonFiniteValue("features contain NaN or Inf")
    if has_labels:
        labels = np.frombuffer(buf, dtype="<i4", count=n, offset=off).astype(np.int64)
        if not np.any(labels != UNLABELED):
            raise MalformedHeader("has_labels set but every label is -1")
    else:
        labels = np.full(n, UNLABELED, dtype=np.int64)
    return Dataset(feats.astype(np.float32), labels, domains, known, meta)


# ---------------------------------------------------------------------------
# CSV (flat embeddings only)


def _save_csv(ds: Dataset, path: Path) -> None:
    if ds.n_patches != 1:
        raise ShapeMismatch("CSV export supports n_patches == 1 only")
    flat = ds.features[:, 0, :]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.patch_dim)] + ["label"])
        for row, lab in zip(flat, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def _load_csv(path: Path, domain: Domain, known_classes) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedHeader("empty CSV file")
    header, body = rows[0], rows[1:]
    d = len(header) - 1
    if d < 1 or header != [f"f{j}" for j in range(d)] + ["label"]:
        raise MalformedHeader("CSV header must be f0,...,f{d-1},label")
    if not body:
        raise MalformedHeader("CSV has no data rows")
    feats = np.empty((len(body), 1, d), dtype=np.float32)
    labels = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != d + 1:
            raise ShapeMismatch(f"row {i + 1} has {len(row)} columns, expected {d + 1}")
        try:
            feats[i, 0] = [float(v) for v in row[:d]]
            labels[i] = int(row[d])
        except ValueError:
            raise MalformedHeader(f"row {i + 1} is not numeric") from None
    if not np.all(np.isfinite(feats)):
        raise NonFiniteValue("CSV contains NaN or Inf")
    if known_classes is None:
        if domain != Domain.SOURCE:
            raise MissingLabels("known_classes is required when loading target CSV data")
        known_classes = sorted(set(labels.tolist()) - {UNLABELED})
    return Dataset(feats, labels, np.full(len(body), int(domain), dtype=np.uint8), tuple(known_classes))


# ---------------------------------------------------------------------------


def load_dataset(path, format: FileFormat | str = FileFormat.GCDE, *, domain=Domain.TARGET, known_classes=None) -> Dataset:
    """Read a dataset. ``domain``/``known_classes`` only apply to CSV input."""
    path = Path(path)
    fmt = FileFormat(format)
    try:
        if fmt is FileFormat.GCDE:
            return decode_gcde(path.read_bytes())
        return _load_csv(path, Domain(domain), known_classes)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def save_dataset(ds: Dataset, path, format: FileFormat | str = FileFormat.GCDE) -> None:
    path = Path(path)
    fmt = FileFormat(format)
    tmp = path.with_name(path.name + ".tmp")
    try:
        if fmt is FileFormat.GCDE:
            tmp.write_bytes(encode_gcde(ds))
        else:
            _save_csv(ds, tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    finally:
        if tmp.exists():
            tmp.unlink()


def concat(a: Dataset, b: Dataset) -> Dataset:
    if (a.n_patches, a.patch_dim) != (b.n_patches, b.patch_dim):
        raise ShapeMismatch("datasets have different patch shapes")
    return Dataset(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
        np.concatenate([a.domains, b.domains]),
        tuple(sorted(set(a.known_classes) | set(b.known_classes))),
        {**a.metadata, **b.metadata},
    )


def split_subsets(target: Dataset | np.ndarray, known) -> tuple[np.ndarray, np.ndarray]:
    """Indices of target samples whose label is a known class (Old) vs not (New)."""
    labels = target.labels if isinstance(target, Dataset) else np.asarray(target)
    if labels.size and np.any(labels == UNLABELED):
        raise MissingLabels("every target sample needs a label for evaluation")
    is_old = np.isin(labels, np.asarray(sorted(known), dtype=np.int64))
    return np.flatnonzero(is_old), np.flatnonzero(~is_old)


# ---------------------------------------------------------------------------
# Synthetic benchmark


@dataclass
class SyntheticConfig:
    """Class-conditional Gaussian patches with an affine source -> target shift.

    ``class_sep`` is the RMS per-coordinate distance between two class means,
    in units of ``noise_std``. ``translation`` is the norm of the (per-patch)
    target offset relative to the RMS norm of a class mean patch. Rotation is
    applied in disjoint coordinate planes, so every vector turns by exactly
    ``rotation_deg`` when ``patch_dim`` is even.

    With ``nuisance_rank > 0`` the within-class covariance gains a low-rank
    term shared by every class and both domains: each sample is offset by
    ``nuisance_std`` (again in units of ``noise_std``) times a standard normal
    draw along ``nuisance_rank`` fixed orthonormal directions of the
    flattened feature space.
    """

    n_known: int = 4
    n_novel: int = 3
    patch_dim: int = 16
    n_patches: int = 16
    samples_per_class: int = 100
    class_sep: float = 1.0
    rotation_deg: float = 30.0
    scale: float = 1.0
    translation: float = 0.3
    noise_std: float = 1.0
    patch_offset_frac: float = 0.5
    nuisance_rank: int = 0
    nuisance_std: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_known < 1 or self.n_novel < 0:
            raise InvalidConfig("need n_known >= 1 and n_novel >= 0")
        if self.patch_dim < 1 or self.n_patches < 1 or self.samples_per_class < 1:
            raise InvalidConfig("patch_dim, n_patches and samples_per_class must be >= 1")
        if not self.class_sep > 0 or not self.noise_std > 0 or not self.scale > 0:
            raise InvalidConfig("class_sep, noise_std and scale must be > 0")
        if self.nuisance_rank < 0 or self.nuisance_std < 0:
            raise InvalidConfig("nuisance_rank and nuisance_std must be >= 0")
        if self.nuisance_rank > self.n_patches * self.patch_dim:
            raise InvalidConfig("nuisance_rank exceeds the feature dimension")
        if self.translation < 0 or not 0.0 <= self.patch_offset_frac <= 1.0:
            raise InvalidConfig("translation must be >= 0 and patch_offset_frac in [0, 1]")
        if not all(math.isfinite(float(v)) for v in (self.rotation_deg, self.class_sep, self.translation)):
            raise InvalidConfig("non-finite config value")


@dataclass(frozen=True)
class DomainShift:
    rotation: np.ndarray
    scale: float
    translation: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * x @ self.rotation.T + self.translation


def plane_rotation(d: int, angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(d)
    c, s = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
    rot = np.eye(d)
    for i, j in zip(perm[0::2], perm[1::2]):
        rot[i, i], rot[i, j], rot[j, i], rot[j, j] = c, -s, s, c
    return rot


def synthetic_class_means(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    n_cls = cfg.n_known + cfg.n_novel
    var = (cfg.class_sep * cfg.noise_std) ** 2 / 2.0
    base = rng.normal(0.0, math.sqrt(var * (1 - cfg.patch_offset_frac)), (n_cls, 1, cfg.patch_dim))
    offsets = rng.normal(0.0, math.sqrt(var * cfg.patch_offset_frac), (n_cls, cfg.n_patches, cfg.patch_dim))
    return base + offsets


def generate_synthetic(cfg: SyntheticConfig, *, return_shift: bool = False):
    """Return ``(source, target)``; with ``return_shift`` also the means and shift."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    means = synthetic_class_means(cfg, rng)
    rot = plane_rotation(cfg.patch_dim, cfg.rotation_deg, rng)
    direction = rng.normal(size=cfg.patch_dim)
    direction /= np.linalg.norm(direction)
    mean_rms = (cfg.class_sep * cfg.noise_std) * math.sqrt(cfg.patch_dim / 2.0)
    shift = DomainShift(rot, cfg.scale, cfg.translation * mean_rms * direction)

    flat_dim = cfg.n_patches * cfg.patch_dim
    nuisance = None
    if cfg.nuisance_rank:
        q, _ = np.linalg.qr(rng.normal(size=(flat_dim, cfg.nuisance_rank)))
        nuisance = q.T.reshape(cfg.nuisance_rank, cfg.n_patches, cfg.patch_dim)

    n = cfg.samples_per_class
    known = tuple(range(cfg.n_known))
    all_classes = range(cfg.n_known + cfg.n_novel)

    def draw(classes):
        labels = np.repeat(np.asarray(list(classes), dtype=np.int64), n)
        noise = rng.normal(0.0, cfg.noise_std, (labels.size, cfg.n_patches, cfg.patch_dim))
        if nuisance is not None:
            coef = rng.normal(0.0, cfg.nuisance_std * cfg.noise_std, (labels.size, cfg.nuisance_rank))
            noise = noise + np.einsum("nr,rpd->npd", coef, nuisance)
        return means[labels] + noise, labels

    src_x, src_y = draw(known)
    tgt_x, tgt_y = draw(all_classes)
    tgt_x = shift.apply(tgt_x)
    meta = {"generator": "synthetic", "seed": str(cfg.seed)}
    source = Dataset(src_x, src_y, np.zeros(src_y.size, np.uint8), known, dict(meta))
    target = Dataset(tgt_x, tgt_y, np.ones(tgt_y.size, np.uint8), known, dict(meta))
    if return_shift:
        return source, target, means, shift
    return source, target

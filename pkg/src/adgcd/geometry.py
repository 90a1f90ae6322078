"""Class prototypes, cosine similarity, distance profiles and their entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyClass, ShapeMismatch, ZeroVector

PROFILE_MODES = ("softmax", "shifted_sum")


@dataclass(frozen=True)
class PrototypeBank:
    """One unit-norm prototype per known class; row ``i`` belongs to ``classes[i]``."""

    prototypes: np.ndarray
    classes: tuple[int, ...]

    def __post_init__(self):
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] != len(self.classes):
            raise ShapeMismatch("prototype matrix must be (n_classes, dim)")
        if self.prototypes.shape[0] == 0:
            raise EmptyClass("prototype bank is empty")

    def __len__(self) -> int:
        return len(self.classes)

    def index_of(self, labels) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[int(y)] for y in np.atleast_1d(labels)], dtype=np.int64)


def compute_prototypes(embeddings: np.ndarray, labels, classes=None) -> PrototypeBank:
    """L2-normalized per-class mean of ``embeddings``."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = tuple(sorted(set(labels.tolist()))) if classes is None else tuple(classes)
    protos = np.empty((len(classes), emb.shape[1]))
    for i, c in enumerate(classes):
        members = emb[labels == c]
        if members.shape[0] == 0:
            raise EmptyClass(f"class {c} has no labeled embeddings")
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ZeroVector(f"class {c} has a zero mean embedding")
        protos[i] = mean / norm
    return PrototypeBank(protos, classes)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(z: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``z`` against each (unit-norm) prototype row."""
    z = np.atleast_2d(z)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("zero embedding")
    return (z / norms) @ protos.T


def softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def normalize_similarities(sims: np.ndarray, mode: str = "softmax") -> np.ndarray:
    if mode == "softmax":
        return softmax(sims)
    if mode == "shifted_sum":
        # cosines shifted into [0, 2] then sum-normalized
        shifted = sims + 1.0
        total = shifted.sum(axis=-1, keepdims=True)
        k = sims.shape[-1]
        return np.where(total > 0, shifted / np.where(total > 0, total, 1.0), 1.0 / k)
    raise ValueError(f"unknown profile mode {mode!r}")


def distance_profile(z, bank: PrototypeBank, mode: str = "softmax") -> np.ndarray:
    """Probability vector over known classes from cosine similarities.

    Accepts one embedding or a batch of row embeddings.
    """
    z = np.asarray(z, dtype=np.float64)
    probs = normalize_similarities(cosine_matrix(z, bank.prototypes), mode)
    return probs[0] if z.ndim == 1 else probs


def entropy(p) -> np.ndarray | float:
    """Shannon entropy (nats) along the last axis, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    h = -np.sum(p * logs, axis=-1)
    return float(h) if h.ndim == 0 else h


def manhattan(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"profiles have shapes {p.shape} and {q.shape}")
    return float(np.abs(p - q).sum())


def manhattan_matrix(profiles: np.ndarray) -> np.ndarray:
    """Pairwise L1 distances between rows."""
    return np.abs(profiles[:, None, :] - profiles[None, :, :]).sum(axis=-1)

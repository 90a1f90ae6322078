"""Training objectives. Every function returns the batch-mean loss together
with its exact gradient with respect to the inputs it was given."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, LabelOutOfRange, NegativeLoss, ShapeMismatch, ZeroVector
from .geometry import PrototypeBank, softmax

PROB_CLAMP = 1e-7


def _cosine_to_protos(z: np.ndarray, protos: np.ndarray):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("zero embedding")
    zh = z / norms
    return zh @ protos.T, zh, norms


def _cosine_backward(dc: np.ndarray, zh: np.ndarray, norms: np.ndarray, protos: np.ndarray) -> np.ndarray:
    g = dc @ protos
    return (g - zh * np.sum(zh * g, axis=1, keepdims=True)) / norms


def _log_softmax(a: np.ndarray) -> np.ndarray:
    s = a - a.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def loss_warmup(logits, labels) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy; ``labels`` are column indices into ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if n == 0:
        raise EmptyBatch("empty batch")
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise LabelOutOfRange("labels must index logits columns")
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


@dataclass
class AlignBatch:
    """Discriminator-space target embeddings scored against a uniform pseudo-target."""

    embeddings: np.ndarray
    n_classes: int
    reversal: float = 1.0

    @property
    def pseudo_target(self) -> np.ndarray:
        return np.full(self.n_classes, 1.0 / self.n_classes)


def loss_align(h, bank: PrototypeBank) -> tuple[float, np.ndarray]:
    """Mean cross-entropy between the uniform distribution and each profile.

    ``h`` holds embeddings in the space of ``bank``. The returned gradient is
    the plain descent gradient; callers route it through ``grad_reverse``.
    """
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[0] == 0:
        raise EmptyBatch("empty batch")
    n, k = h.shape[0], len(bank)
    sims, zh, norms = _cosine_to_protos(h, bank.prototypes)
    d = softmax(sims)
    live = d > PROB_CLAMP
    clamped = np.where(live, d, PROB_CLAMP)
    loss = -np.log(clamped).sum(axis=1).mean() / k
    # dL/dd_k = -1/(K d_k) on the unclamped entries, then softmax jacobian
    g = np.where(live, -1.0 / (k * clamped), 0.0)
    dsims = d * (g - np.sum(d * g, axis=1, keepdims=True))
    return float(loss), _cosine_backward(dsims, zh, norms, bank.prototypes) / n


def loss_con_source(z, labels, bank: PrototypeBank) -> tuple[float, np.ndarray]:
    """Softmax over cosine similarity to every prototype, CE against the sample's class.

    ``labels`` are class ids (looked up in ``bank.classes``).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 0:
        raise EmptyBatch("empty batch")
    try:
        idx = bank.index_of(labels)
    except KeyError as exc:
        raise LabelOutOfRange(f"label {exc.args[0]} is not a known class") from None
    if idx.shape[0] != z.shape[0]:
        raise ShapeMismatch("one label per embedding required")
    n = z.shape[0]
    sims, zh, norms = _cosine_to_protos(z, bank.prototypes)
    logp = _log_softmax(sims)
    loss = -logp[np.arange(n), idx].mean()
    dsims = np.exp(logp)
    dsims[np.arange(n), idx] -= 1.0
    return float(loss), _cosine_backward(dsims / n, zh, norms, bank.prototypes)


@dataclass
class ContrastSet:
    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray
    tau: float = 0.1

    def __post_init__(self):
        if np.atleast_2d(self.negatives).shape[0] < 1:
            raise ValueError("at least one negative required")
        if not self.tau > 0:
            raise ValueError("temperature must be > 0")


def loss_con_target(pool, anchors, positives, negatives, tau: float = 0.1) -> tuple[float, np.ndarray]:
    """InfoNCE over index sets into ``pool``.

    ``anchors``/``positives`` are length-B index arrays, ``negatives`` is
    ``(B, M)``. Returns the mean loss and its gradient w.r.t. every pool row.
    """
    pool = np.asarray(pool, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(anchors.size, -1)
    if anchors.size == 0:
        raise EmptyBatch("no anchors")
    b = anchors.size
    norms = np.linalg.norm(pool, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("zero embedding in pool")
    u = pool / norms
    others = np.concatenate([positives[:, None], negatives], axis=1)
    ua = u[anchors]
    uo = u[others]
    logits = np.einsum("bd,bmd->bm", ua, uo) / tau
    logp = _log_softmax(logits)
    loss = -logp[:, 0].mean()
    dlog = np.exp(logp)
    dlog[:, 0] -= 1.0
    dlog /= b * tau
    du = np.zeros_like(u)
    np.add.at(du, anchors, np.einsum("bm,bmd->bd", dlog, uo))
    np.add.at(du, others.reshape(-1), (dlog[:, :, None] * ua[:, None, :]).reshape(-1, u.shape[1]))
    dpool = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms
    return float(loss), dpool


def loss_con_target_set(cs: ContrastSet) -> tuple[float, np.ndarray]:
    """Single-anchor InfoNCE; gradient is w.r.t. ``[anchor, positive, *negatives]`` rows."""
    neg = np.atleast_2d(np.asarray(cs.negatives, dtype=np.float64))
    pool = np.vstack([cs.anchor, cs.positive, neg])
    return loss_con_target(pool, [0], [1], [np.arange(2, 2 + neg.shape[0])], cs.tau)


def loss_recon(pred, true) -> tuple[np.ndarray | float, np.ndarray]:
    """Mean squared error per sample.

    For batched rows the first return value is the vector of per-row losses
    and the gradient row ``i`` is the derivative of loss ``i`` w.r.t. ``pred[i]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {true.shape}")
    diff = pred - true
    dim = pred.shape[-1]
    r = np.mean(diff * diff, axis=-1)
    grad = 2.0 * diff / dim
    return (float(r) if r.ndim == 0 else r), grad


def loss_inpaint(r_self, r_sim, r_diff) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Hinge on ``r_sim - r_diff`` plus the self-conditioned reconstruction.

    Returns the batch mean and the coefficients of the mean w.r.t. each of the
    three reconstruction losses (subgradient 0 at the kink).
    """
    r_self, r_sim, r_diff = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (r_self, r_sim, r_diff))
    if not (r_self.shape == r_sim.shape == r_diff.shape):
        raise ShapeMismatch("reconstruction losses must have equal shape")
    if r_self.size == 0:
        raise EmptyBatch("empty batch")
    if np.any(r_self < 0) or np.any(r_sim < 0) or np.any(r_diff < 0):
        raise NegativeLoss("reconstruction losses must be >= 0")
    n = r_self.size
    active = (r_sim > r_diff).astype(np.float64)
    value = np.mean(np.maximum(0.0, r_sim - r_diff) + r_self)
    return float(value), (np.full(n, 1.0 / n), active / n, -active / n)

"""Dense feed-forward networks with hand-written backward passes, Adam,
finite-difference gradient checks and a parameter checkpoint format.

All arithmetic is float64. ``forward`` accepts a single vector or a batch of
row vectors; gradients are returned in ``Mlp.params()`` order
``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import IoFailure, MalformedHeader, NonFiniteValue, ShapeMismatch, TapeReused, UnknownVersion

ACTIVATIONS = ("relu", "identity")


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeMismatch("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i} input width does not match previous output")

    @classmethod
    def init(cls, widths: Sequence[int], activations: Sequence[str] | None = None, rng=None) -> "Mlp":
        """He-normal weights, zero biases. Default: ReLU hidden layers, identity output."""
        rng = np.random.default_rng(rng)
        n_layers = len(widths) - 1
        if n_layers < 1:
            raise ShapeMismatch("need at least an input and an output width")
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        weights = [rng.normal(0.0, np.sqrt(2.0 / widths[i]), (widths[i], widths[i + 1])) for i in range(n_layers)]
        biases = [np.zeros(widths[i + 1]) for i in range(n_layers)]
        return cls(weights, biases, list(activations))

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))


@dataclass
class GradTape:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    squeeze: bool
    used: bool = False


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, GradTape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.weights[0].shape[0]:
        raise ShapeMismatch(f"input shape {x.shape} does not match input width {net.weights[0].shape[0]}")
    inputs, preacts = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        a = h @ w + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if act == "relu" else a
    return (h[0] if squeeze else h), GradTape(inputs, preacts, squeeze)


def backward(net: Mlp, tape: GradTape, dy: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    if tape.used:
        raise TapeReused("a GradTape can be consumed by backward only once")
    tape.used = True
    g = np.asarray(dy, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.preacts[-1].shape:
        raise ShapeMismatch(f"upstream gradient {g.shape} does not match output {tape.preacts[-1].shape}")
    grads: list[np.ndarray] = []
    for i in reversed(range(len(net.weights))):
        if net.activations[i] == "relu":
            g = g * (tape.preacts[i] > 0)
        grads = [tape.inputs[i].T @ g, g.sum(axis=0)] + grads
        g = g @ net.weights[i].T
    return grads, (g[0] if tape.squeeze else g)


def grad_reverse(g, lam: float):
    """Gradient-reversal connection: pass ``-lam * g`` upstream."""
    if lam < 0:
        raise ValueError("reversal strength must be >= 0")
    return -lam * np.asarray(g, dtype=np.float64)


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit normalization; returns ``(y, norms)`` for the backward pass."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12), norms


def l2_normalize_backward(dy: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / np.maximum(norms, 1e-12)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 0.01, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
    """Bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Gradient verification


def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]], point, h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central FD| / max(1, |analytic|)``.

    ``f`` maps a float64 array to ``(value, gradient)``.
    """
    x = np.array(point, dtype=np.float64)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeMismatch("gradient shape differs from point shape")
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteValue("analytic gradient is not finite")
    flat = x.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x.copy())[0]
        flat[i] = old - h
        fm = f(x.copy())[0]
        flat[i] = old
        numeric[i] = (fp - fm) / (2 * h)
    if not np.all(np.isfinite(numeric)):
        raise NonFiniteValue("function is not finite near the point")
    a = analytic.reshape(-1)
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a)))) if a.size else 0.0


def flatten_params(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([p.reshape(-1) for p in params]) if params else np.zeros(0)


def unflatten_into(flat: np.ndarray, params: Sequence[np.ndarray]) -> None:
    off = 0
    for p in params:
        p[...] = flat[off : off + p.size].reshape(p.shape)
        off += p.size


# ---------------------------------------------------------------------------
# Checkpoints
#
# b"GCDK" | u32 version=1 | u32 meta_len | meta (canonical UTF-8 JSON)
# | f64 little-endian blob
#
# meta["tensors"] lists [name, shape] in blob order. Networks are stored
# layer by layer as "<net>.W<i>", "<net>.b<i>" with activations in
# meta["nets"][<net>]; nets appear in the order given by meta["net_order"].

CKPT_MAGIC = b"GCDK"
_CKPT_HEADER = struct.Struct("<4sII")


def save_checkpoint(path, nets: dict[str, Mlp], arrays: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
    arrays = arrays or {}
    tensors, blobs = [], []
    for name, net in nets.items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            for tag, arr in ((f"{name}.W{i}", w), (f"{name}.b{i}", b)):
                tensors.append([tag, list(arr.shape)])
                blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        tensors.append([name, list(arr.shape)])
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "extra": meta or {},
        "net_order": list(nets),
        "nets": {name: net.activations for name, net in nets.items()},
        "tensors": tensors,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(_CKPT_HEADER.pack(CKPT_MAGIC, 1, len(raw)) + raw + b"".join(blobs))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict[str, np.ndarray], dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(buf) < _CKPT_HEADER.size:
        raise MalformedHeader("checkpoint shorter than header")
    magic, version, meta_len = _CKPT_HEADER.unpack_from(buf, 0)
    if magic != CKPT_MAGIC:
        raise MalformedHeader(f"bad checkpoint magic {magic!r}")
    if version != 1:
        raise UnknownVersion(f"unsupported checkpoint version {version}")
    off = _CKPT_HEADER.size
    try:
        header = json.loads(buf[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedHeader("checkpoint metadata is not valid JSON") from None
    off += meta_len
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        if off + 8 * count > len(buf):
            raise ShapeMismatch("checkpoint blob truncated")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(buf):
        raise ShapeMismatch("trailing bytes after checkpoint blob")
    nets = {}
    for name in header["net_order"]:
        acts = header["nets"][name]
        ws = [tensors.pop(f"{name}.W{i}") for i in range(len(acts))]
        bs = [tensors.pop(f"{name}.b{i}") for i in range(len(acts))]
        nets[name] = Mlp(ws, bs, list(acts))
    return nets, tensors, header["extra"]

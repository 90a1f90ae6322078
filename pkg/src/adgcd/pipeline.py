"""Warm-up, alternating alignment / discriminative epochs, and inference.

RNG order (one generator seeded with ``cfg.seed``): network init (encoder,
discriminator, decoder, head), then per warm-up step a source minibatch
permutation, then per epoch the stage-A target permutation, the stage-B
permutations, and per stage-B step the jitter draw and the quadruplet draw,
and finally the inference seeds for K estimation and k-means.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import clustering_eval as ce
from .dataio import Dataset, split_subsets
from .errors import EmptyBatch, InsufficientClusters, InvalidConfig, MissingLabels
from .geometry import PrototypeBank, compute_prototypes, distance_profile, entropy
from .losses import loss_align, loss_con_source, loss_con_target, loss_inpaint, loss_recon, loss_warmup
from .mining import augment, dbscan, mine_neighbors, sample_quadruplets
from .nnkit import AdamState, Mlp, adam_step, backward, forward, grad_reverse, l2_normalize, l2_normalize_backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    warmup_iters: int = 30
    main_iters: int = 50
    patience: int = 10
    lr: float = 0.01
    batch_size: int = 64
    m_negatives: int = 20
    tau: float = 0.1
    sigma_jitter: float = 0.01
    eps_dbscan: float = 1.0
    eps_relative: bool = True
    min_pts: int = 4
    pin_threshold: float = 0.9
    reversal: float = 1.0
    reversal_ramp: int = 0
    k_method: str = "brent"
    k_min: int = 0
    k_max: int = 100
    k_fixed: int = 0
    n_init: int = 5
    profile_mode: str = "softmax"
    interleave: bool = False
    hidden_dim: int = 64
    embed_dim: int = 32
    disc_dim: int = 32
    decoder_hidden: int = 64
    w_con_source: float = 1.0
    w_con_target: float = 1.0
    w_inpaint: float = 1.0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        positive = ("lr", "n_init", "batch_size", "m_negatives", "tau", "eps_dbscan", "min_pts", "k_max", "hidden_dim", "embed_dim", "disc_dim", "decoder_hidden")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0")
        non_negative = ("warmup_iters", "main_iters", "patience", "sigma_jitter", "reversal", "reversal_ramp", "k_min", "k_fixed", "w_con_source", "w_con_target", "w_inpaint")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if self.k_method not in ("brent", "elbow"):
            raise InvalidConfig("k_method must be 'brent' or 'elbow'")
        if self.profile_mode not in ("softmax", "shifted_sum"):
            raise InvalidConfig("profile_mode must be 'softmax' or 'shifted_sum'")
        return self

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
            kind = types[key]
            try:
                if kind == "bool":
                    if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(value)
                    kwargs[key] = value.lower() in ("true", "1", "yes")
                elif kind == "int":
                    kwargs[key] = int(value)
                elif kind == "float":
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = value
            except ValueError:
                raise InvalidConfig(f"line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise InvalidConfig(f"cannot read config: {exc}") from exc

    def to_text(self) -> str:
        return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in dataclasses.asdict(self).items())


# ---------------------------------------------------------------------------
# Model


@dataclass
class Model:
    encoder: Mlp
    disc: Mlp
    decoder: Mlp
    head: Mlp | None
    n_patches: int
    patch_dim: int
    feat_mean: float = 0.0
    feat_std: float = 1.0

    def nets(self) -> dict[str, Mlp]:
        return {"encoder": self.encoder, "disc": self.disc, "decoder": self.decoder}


def build_model(n_patches: int, patch_dim: int, n_known: int, cfg: TrainConfig, rng) -> Model:
    e = cfg.embed_dim
    encoder = Mlp.init([n_patches * patch_dim, cfg.hidden_dim, e], rng=rng)
    disc = Mlp.init([e, cfg.disc_dim, cfg.disc_dim], rng=rng)
    decoder = Mlp.init([2 * e + n_patches, cfg.decoder_hidden, patch_dim], rng=rng)
    head = Mlp.init([e, n_known], ["identity"], rng=rng)
    return Model(encoder, disc, decoder, head, n_patches, patch_dim)


def prepare(model: Model, ds: Dataset) -> np.ndarray:
    return (ds.flat() - model.feat_mean) / model.feat_std


def encode(model: Model, x: np.ndarray):
    """Unit-norm projector output and the cache needed by ``encode_backward``."""
    y, tape = forward(model.encoder, x)
    z, norms = l2_normalize(y)
    return z, (tape, z, norms)


def encode_backward(model: Model, cache, dz: np.ndarray):
    tape, z, norms = cache
    return backward(model.encoder, tape, l2_normalize_backward(dz, z, norms))


def embed(model: Model, x: np.ndarray) -> np.ndarray:
    return encode(model, x)[0]


def mask_patch(model: Model, x: np.ndarray, patch: np.ndarray) -> np.ndarray:
    out = x.copy()
    d = model.patch_dim
    cols = patch[:, None] * d + np.arange(d)[None, :]
    np.put_along_axis(out, cols, 0.0, axis=1)
    return out


def true_patch(model: Model, x: np.ndarray, patch: np.ndarray) -> np.ndarray:
    d = model.patch_dim
    cols = patch[:, None] * d + np.arange(d)[None, :]
    return np.take_along_axis(x, cols, axis=1)


# ---------------------------------------------------------------------------
# Loss assembly (shared by training and the gradient tests)


def align_grads(model: Model, x: np.ndarray, disc_bank: PrototypeBank, lam: float):
    """Alignment loss with the discriminator ascending and the encoder descending.

    Returns ``(loss, encoder_grads, disc_grads)``; both gradient lists are
    meant for a descent optimizer.
    """
    z, cache = encode(model, x)
    h, dtape = forward(model.disc, z)
    loss, dh = loss_align(h, disc_bank)
    disc_grads, dz_ascent = backward(model.disc, dtape, -dh)
    enc_grads, _ = encode_backward(model, cache, grad_reverse(dz_ascent, lam))
    return loss, enc_grads, disc_grads


def inpaint_terms(model: Model, z_masked, z_self, z_sim, z_diff, patch, target_patch):
    """Decoder forward/backward for the three conditionings of each quadruplet.

    Returns ``(loss, decoder_grads, dz_masked, dz_self, dz_sim, dz_diff)``.
    """
    b = patch.size
    onehot = np.zeros((b, model.n_patches))
    onehot[np.arange(b), patch] = 1.0
    cond = np.vstack([z_self, z_sim, z_diff])
    inp = np.hstack([np.tile(z_masked, (3, 1)), cond, np.tile(onehot, (3, 1))])
    pred, tape = forward(model.decoder, inp)
    r, dr = loss_recon(pred, np.tile(target_patch, (3, 1)))
    r_self, r_sim, r_diff = r[:b], r[b : 2 * b], r[2 * b :]
    loss, (c_self, c_sim, c_diff) = loss_inpaint(r_self, r_sim, r_diff)
    coef = np.concatenate([c_self, c_sim, c_diff])
    dec_grads, dinp = backward(model.decoder, tape, dr * coef[:, None])
    e = z_masked.shape[1]
    dzm = dinp[:, :e].reshape(3, b, e).sum(axis=0)
    dcond = dinp[:, e : 2 * e]
    return loss, dec_grads, dzm, dcond[:b], dcond[b : 2 * b], dcond[2 * b :]


def inpaint_grads(model: Model, x: np.ndarray, patch: np.ndarray, x_sim: np.ndarray, x_diff: np.ndarray):
    """Inpainting loss through encoder and decoder: ``(loss, encoder_grads, decoder_grads)``."""
    masked = mask_patch(model, x, patch)
    b = x.shape[0]
    z, cache = encode(model, np.vstack([masked, x, x_sim, x_diff]))
    loss, dec_grads, *dzs = inpaint_terms(model, z[:b], z[b : 2 * b], z[2 * b : 3 * b], z[3 * b :], patch, true_patch(model, x, patch))
    enc_grads, _ = encode_backward(model, cache, np.vstack(dzs))
    return loss, enc_grads, dec_grads


def warmup_grads(model: Model, x: np.ndarray, label_idx: np.ndarray):
    z, cache = encode(model, x)
    logits, htape = forward(model.head, z)
    loss, dlogits = loss_warmup(logits, label_idx)
    head_grads, dz = backward(model.head, htape, dlogits)
    enc_grads, _ = encode_backward(model, cache, dz)
    return loss, enc_grads, head_grads


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainState:
    model: Model
    cfg: TrainConfig
    rng: np.random.Generator
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    known: tuple[int, ...]
    opt_enc: AdamState
    opt_disc: AdamState
    opt_dec: AdamState
    epoch: int = 0
    history: dict[str, list[float]] = field(default_factory=lambda: {"align": [], "con_l": [], "con_u": [], "inp": []})
    inp_skipped: int = 0
    warmup_history: list[float] = field(default_factory=list)
    warmup_head: Mlp | None = None

    def banks(self) -> tuple[PrototypeBank, PrototypeBank]:
        zs = embed(self.model, self.xs)
        enc_bank = compute_prototypes(zs, self.ys, self.known)
        hs, _ = forward(self.model.disc, zs)
        return enc_bank, compute_prototypes(hs, self.ys, self.known)


def init_state(source: Dataset, target: Dataset, cfg: TrainConfig) -> TrainState:
    cfg.validate()
    if len(source) == 0:
        raise EmptyBatch("source set is empty")
    if len(target) == 0:
        raise EmptyBatch("target set is empty")
    if (source.n_patches, source.patch_dim) != (target.n_patches, target.patch_dim):
        raise InvalidConfig("source and target patch shapes differ")
    known = source.known_classes
    rng = np.random.default_rng(cfg.seed)
    model = build_model(source.n_patches, source.patch_dim, len(known), cfg, rng)
    pooled = np.concatenate([source.flat(), target.flat()])
    model.feat_mean = float(pooled.mean())
    model.feat_std = float(pooled.std()) or 1.0
    xs, xt = prepare(model, source), prepare(model, target)
    return TrainState(
        model, cfg, rng, xs, source.labels.copy(), xt, known,
        AdamState.for_params(model.encoder.params(), cfg.lr),
        AdamState.for_params(model.disc.params(), cfg.lr),
        AdamState.for_params(model.decoder.params(), cfg.lr),
    )


def _batches(rng, n: int, size: int):
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def run_warmup(state: TrainState) -> list[float]:
    """Supervised cross-entropy on the source set; the classifier head is dropped afterwards."""
    cfg, model = state.cfg, state.model
    if model.head is None:
        raise InvalidConfig("warm-up already ran")
    head_opt = AdamState.for_params(model.head.params(), cfg.lr)
    label_idx = np.searchsorted(np.asarray(state.known), state.ys)
    losses = []
    batches: list[np.ndarray] = []
    for _ in range(cfg.warmup_iters):
        if not batches:
            batches = _batches(state.rng, state.xs.shape[0], cfg.batch_size)
        idx = batches.pop(0)
        loss, enc_g, head_g = warmup_grads(model, state.xs[idx], label_idx[idx])
        adam_step(state.opt_enc, model.encoder.params(), enc_g)
        adam_step(head_opt, model.head.params(), head_g)
        losses.append(loss)
    state.warmup_head = model.head
    model.head = None
    return losses


def _reversal(cfg: TrainConfig, epoch: int) -> float:
    if cfg.reversal_ramp <= 0:
        return cfg.reversal
    return cfg.reversal * min(1.0, (epoch + 1) / cfg.reversal_ramp)


def _stage_a_step(state: TrainState, idx, disc_bank, lam) -> float:
    model = state.model
    loss, enc_g, disc_g = align_grads(model, state.xt[idx], disc_bank, lam)
    adam_step(state.opt_disc, model.disc.params(), disc_g)
    adam_step(state.opt_enc, model.encoder.params(), enc_g)
    return loss


def _stage_b_step(state: TrainState, src_idx, tgt_idx, clusters, pooled_x, enc_bank, disc_bank):
    cfg, model, rng = state.cfg, state.model, state.rng
    xs = state.xs[src_idx]
    pool_x, _ = augment(state.xt[tgt_idx], cfg.sigma_jitter, rng)
    parts = [xs, pool_x]
    quads = None
    if clusters is not None:
        quads = sample_quadruplets(clusters, tgt_idx.size, model.n_patches, rng)
        qx = pooled_x[[q.x for q in quads]]
        patch = np.array([q.masked_patch for q in quads])
        parts += [mask_patch(model, qx, patch), qx, pooled_x[[q.x_sim for q in quads]], pooled_x[[q.x_diff for q in quads]]]
    sizes = np.cumsum([p.shape[0] for p in parts])[:-1]
    z, cache = encode(model, np.vstack(parts))
    chunks = np.split(z, sizes)
    dz = [np.zeros_like(c) for c in chunks]

    l_src, dz[0] = loss_con_source(chunks[0], state.ys[src_idx], enc_bank)
    dz[0] *= cfg.w_con_source

    zp = chunks[1]
    h, _ = forward(model.disc, zp)
    profiles = distance_profile(h, disc_bank, cfg.profile_mode)
    n_pool = zp.shape[0]
    m = min(cfg.m_negatives, n_pool - 2)
    if m >= 1:
        nb = mine_neighbors(profiles, m)
        anchors = np.arange(tgt_idx.size)
        l_tgt, dz[1] = loss_con_target(zp, anchors, nb.positive[anchors], nb.negatives[anchors], cfg.tau)
        dz[1] *= cfg.w_con_target
    else:
        l_tgt = 0.0

    l_inp = float("nan")
    dec_g = None
    if quads is not None:
        l_inp, dec_g, *dq = inpaint_terms(model, *chunks[2:], patch, true_patch(model, qx, patch))
        for j, g in enumerate(dq):
            dz[2 + j] = cfg.w_inpaint * g
        dec_g = [cfg.w_inpaint * g for g in dec_g]
    enc_g, _ = encode_backward(model, cache, np.vstack(dz))
    adam_step(state.opt_enc, model.encoder.params(), enc_g)
    if dec_g is not None:
        adam_step(state.opt_dec, model.decoder.params(), dec_g)
    return l_src, l_tgt, l_inp


def dbscan_radius(z: np.ndarray, cfg: TrainConfig) -> float:
    """DBSCAN radius; relative mode measures it in median ``min_pts``-NN distances."""
    if not cfg.eps_relative:
        return cfg.eps_dbscan
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    kth = np.sqrt(np.partition(d2, cfg.min_pts - 1, axis=1)[:, cfg.min_pts - 1])
    return cfg.eps_dbscan * max(float(np.median(kth)), 1e-12)


def _over_cluster(state: TrainState, pooled_x: np.ndarray):
    cfg = state.cfg
    z = embed(state.model, pooled_x)
    labels = dbscan(z, dbscan_radius(z, cfg), cfg.min_pts)
    try:
        sample_quadruplets(labels, 0, state.model.n_patches, np.random.default_rng(0))
    except InsufficientClusters:
        log.warning("epoch %d: DBSCAN found too few clusters, skipping the inpainting loss", state.epoch)
        state.inp_skipped += 1
        return None
    return labels


def run_epoch(state: TrainState) -> dict[str, float]:
    """One alignment stage followed by one discriminative stage."""
    cfg = state.cfg
    if state.xt.shape[0] == 0:
        raise EmptyBatch("target set is empty")
    enc_bank, disc_bank = state.banks()
    lam = _reversal(cfg, state.epoch)
    pooled_x = np.vstack([state.xs, state.xt])
    rec = {"align": [], "con_l": [], "con_u": [], "inp": []}

    tgt_a = _batches(state.rng, state.xt.shape[0], cfg.batch_size)
    if not cfg.interleave:
        for idx in tgt_a:
            rec["align"].append(_stage_a_step(state, idx, disc_bank, lam))
    clusters = _over_cluster(state, pooled_x)
    tgt_b = _batches(state.rng, state.xt.shape[0], cfg.batch_size)
    src_b = _batches(state.rng, state.xs.shape[0], cfg.batch_size)
    for step, idx in enumerate(tgt_b):
        if cfg.interleave:
            rec["align"].append(_stage_a_step(state, tgt_a[step], disc_bank, lam))
        l_src, l_tgt, l_inp = _stage_b_step(state, src_b[step % len(src_b)], idx, clusters, pooled_x, enc_bank, disc_bank)
        rec["con_l"].append(l_src)
        rec["con_u"].append(l_tgt)
        rec["inp"].append(l_inp)
    out = {k: (float(np.mean(v)) if v and not np.all(np.isnan(v)) else float("nan")) for k, v in rec.items()}
    for k, v in out.items():
        state.history[k].append(v)
    state.epoch += 1
    return out


def stage_b_total(rec: dict[str, float], cfg: TrainConfig) -> float:
    inp = rec["inp"] if math.isfinite(rec["inp"]) else 0.0
    return cfg.w_con_source * rec["con_l"] + cfg.w_con_target * rec["con_u"] + cfg.w_inpaint * inp


def train(source: Dataset, target: Dataset, cfg: TrainConfig) -> TrainState:
    state = init_state(source, target, cfg)
    state.warmup_history = run_warmup(state)
    best, stale = math.inf, 0
    for _ in range(cfg.main_iters):
        rec = run_epoch(state)
        total = stage_b_total(rec, cfg)
        if total < best - 1e-4 * abs(best if math.isfinite(best) else 0.0):
            best, stale = total, 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                log.info("early stop after epoch %d", state.epoch)
                break
    return state


# ---------------------------------------------------------------------------
# Inference and reporting


def auroc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Probability a positive outranks a negative (ties count half)."""
    pos, neg = np.asarray(scores_pos, float), np.asarray(scores_neg, float)
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size))


@dataclass
class InferenceResult:
    clustering: ce.ClusteringResult
    metrics: ce.GcdMetrics | None
    k: int
    target_assignment: np.ndarray
    target_embeddings: np.ndarray
    target_entropy: np.ndarray
    n_pseudo_pins: int


def cluster_embeddings(zs, ys, zt, known, cfg: TrainConfig, rng, target_labels=None) -> InferenceResult:
    """Estimate K, pin source labels and confident targets, and run ss-k-means."""
    known = tuple(known)
    n_src = zs.shape[0]
    x = np.vstack([zs, zt]) if n_src else zt
    bank = compute_prototypes(zs, ys, known) if n_src else None
    return _cluster(x, n_src, ys, bank, known, cfg, rng, target_labels)


def clustering_pins(zs, ys, zt, known, cfg: TrainConfig) -> tuple[np.ndarray, ce.PinSet, int]:
    """Pooled embeddings, the pin set (source labels + confident targets) and the pseudo-pin count."""
    known = tuple(known)
    n_src = zs.shape[0]
    x = np.vstack([zs, zt]) if n_src else zt
    if not n_src:
        return x, ce.PinSet(), 0
    bank = compute_prototypes(zs, ys, known)
    src_pins = ce.PinSet.from_labels(np.arange(n_src), np.searchsorted(np.asarray(known), ys))
    pseudo = ce.confident_pseudo_pins(zt, bank.prototypes, cfg.pin_threshold, offset=n_src)
    return x, src_pins.merge(pseudo), len(pseudo)


def _cluster(x, n_src, ys, bank, known, cfg, rng, target_labels):
    zt = x[n_src:]
    _, pins, n_pseudo = clustering_pins(x[:n_src], ys, zt, known, cfg)
    k_seed, km_seed = rng.integers(2**32, size=2)
    km_seeds = np.random.default_rng(km_seed).integers(2**32, size=cfg.n_init)
    lo = cfg.k_min or len(known)
    if cfg.k_fixed:
        k = cfg.k_fixed
    elif n_src:
        k = ce.estimate_k(x, pins, (lo, min(cfg.k_max, x.shape[0])), cfg.k_method, rng=k_seed, n_known=len(known), n_init=cfg.n_init)
    else:
        k = ce.elbow_k(x, pins, (lo, min(cfg.k_max, x.shape[0])), rng=k_seed, n_known=len(known), n_init=cfg.n_init)
    init = None
    if n_src:
        init = np.vstack([x[:n_src][ys == c].mean(axis=0) for c in known])
    res = ce.best_of(x, k, pins, km_seeds, init_centers=init, n_known=len(known))
    assign_t = res.assignment[n_src:]
    metrics = None
    if target_labels is not None:
        metrics = ce.gcd_accuracy(assign_t, target_labels, known)
    ent = entropy(distance_profile(zt, bank, cfg.profile_mode))
    return InferenceResult(res, metrics, k, assign_t, zt, ent, n_pseudo)


def run_inference(state: TrainState, target_labels=None) -> InferenceResult:
    zs = embed(state.model, state.xs)
    zt = embed(state.model, state.xt)
    return cluster_embeddings(zs, state.ys, zt, state.known, state.cfg, state.rng, target_labels)


def entropy_stats(ent: np.ndarray, labels, known) -> dict[str, float]:
    old, new = split_subsets(np.asarray(labels), known)
    return {
        "known_mean": float(ent[old].mean()) if old.size else float("nan"),
        "novel_mean": float(ent[new].mean()) if new.size else float("nan"),
        "auroc": auroc(ent[new], ent[old]),
    }


@dataclass
class RunReport:
    losses: dict[str, list[float]]
    warmup_losses: list[float]
    metrics: dict | None
    k: int
    entropy: dict[str, float] | None
    n_pseudo_pins: int
    epochs: int
    inpaint_skipped: int
    config: dict
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_clock_s")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        """Canonical JSON (sorted keys); timing is left out unless asked for."""
        return json.dumps(_jsonable(self.to_dict(include_timing)), sort_keys=True, indent=1, allow_nan=True)

    def summary_csv(self) -> str:
        m = self.metrics or {}
        e = self.entropy or {}
        cols = ["k", "all", "old", "new", "entropy_known", "entropy_novel", "entropy_auroc", "epochs"]
        vals = [self.k, m.get("all"), m.get("old"), m.get("new"), e.get("known_mean"), e.get("novel_mean"), e.get("auroc"), self.epochs]
        return ",".join(cols) + "\n" + ",".join("" if v is None else repr(v) for v in vals) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def make_report(state: TrainState, inf: InferenceResult, target_labels=None, wall: float = 0.0) -> RunReport:
    ent = entropy_stats(inf.target_entropy, target_labels, state.known) if target_labels is not None else None
    return RunReport(
        losses={k: list(v) for k, v in state.history.items()},
        warmup_losses=list(state.warmup_history),
        metrics=inf.metrics.as_dict() if inf.metrics else None,
        k=int(inf.k),
        entropy=ent,
        n_pseudo_pins=inf.n_pseudo_pins,
        epochs=state.epoch,
        inpaint_skipped=state.inp_skipped,
        config=dataclasses.asdict(state.cfg),
        wall_clock_s=wall,
    )


def run(source: Dataset, target: Dataset, cfg: TrainConfig) -> tuple[TrainState, InferenceResult, RunReport]:
    """Train, cluster and report in one call."""
    t0 = time.perf_counter()
    state = train(source, target, cfg)
    labels = target.labels if not np.any(target.labels < 0) else None
    inf = run_inference(state, labels)
    return state, inf, make_report(state, inf, labels, time.perf_counter() - t0)


def raw_kmeans_baseline(source: Dataset, target: Dataset, k: int, seed: int) -> ce.GcdMetrics:
    """Plain k-means++ / Lloyd on the raw features of source and target together."""
    if np.any(target.labels < 0):
        raise MissingLabels("baseline evaluation needs target labels")
    x = np.vstack([source.flat(), target.flat()])
    res = ce.ss_kmeans(x, k, None, rng=np.random.default_rng(seed))
    return ce.gcd_accuracy(res.assignment[len(source):], target.labels, target.known_classes)


def pca_2d(z: np.ndarray) -> np.ndarray:
    zc = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(zc, full_matrices=False)
    return zc @ vt[:2].T

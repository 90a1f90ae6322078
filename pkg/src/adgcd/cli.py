"""Command line entry point: ``adgcd <verb> ...``.

Verbs: generate, train, eval, estimate-k, report. Exit codes: 0 success,
2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import clustering_eval as ce
from . import nnkit
from . import pipeline as pl
from .dataio import FileFormat, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, DataError, InvalidConfig, IoFailure, ShapeMismatch

log = logging.getLogger("adgcd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _thread_limit():
    raw = os.environ.get("GCD_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"GCD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidConfig("GCD_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _fmt(path: str) -> FileFormat:
    return FileFormat.CSV if str(path).endswith(".csv") else FileFormat.GCDE


def _read(path: str | None) -> str:
    if not path:
        return ""
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc


def _load_cfg(path: str | None, overrides: list[str]) -> pl.TrainConfig:
    return pl.TrainConfig.from_text(_read(path) + "\n" + "\n".join(overrides))


def _synthetic_cfg(path: str | None, overrides: list[str]) -> SyntheticConfig:
    lines = _read(path).splitlines() + overrides
    fields = {f.name: f for f in dataclasses.fields(SyntheticConfig)}
    kw = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise InvalidConfig(f"unknown generator key {key!r}")
        caster = int if fields[key].type in ("int", int) else float
        try:
            kw[key] = caster(val)
        except ValueError:
            raise InvalidConfig(f"bad value for {key}: {val!r}") from None
    cfg = SyntheticConfig(**kw)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(path: Path, state: pl.TrainState) -> None:
    m = state.model
    zs = pl.embed(m, state.xs)
    bank = pl.compute_prototypes(zs, state.ys, state.known)
    meta = {
        "config": state.cfg.to_text(),
        "known": list(state.known),
        "n_patches": m.n_patches,
        "patch_dim": m.patch_dim,
        "feat_mean": m.feat_mean,
        "feat_std": m.feat_std,
    }
    arrays = {"prototypes": bank.prototypes, "source_embeddings": zs, "source_labels": state.ys.astype(np.float64)}
    nnkit.save_checkpoint(path, m.nets(), arrays, meta)


def load_model(path: Path):
    nets, arrays, meta = nnkit.load_checkpoint(path)
    model = pl.Model(
        nets["encoder"], nets["disc"], nets["decoder"], None, int(meta["n_patches"]), int(meta["patch_dim"]), float(meta["feat_mean"]), float(meta["feat_std"])
    )
    cfg = pl.TrainConfig.from_text(meta["config"])
    return model, cfg, arrays, tuple(meta["known"])


# ---------------------------------------------------------------------------
# Verbs


def cmd_generate(args) -> int:
    cfg = _synthetic_cfg(args.config, args.set)
    src, tgt = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(src, out / "source.gcde")
    save_dataset(tgt, out / "target.gcde")
    print(f"wrote {len(src)} source and {len(tgt)} target samples to {out}")
    return EXIT_OK


def _write_outputs(out: Path, report: pl.RunReport, zt: np.ndarray | None, pca: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": report.wall_clock_s}))
    (out / "summary.csv").write_text(report.summary_csv())
    if pca and zt is not None and zt.shape[0] >= 2:
        xy = pl.pca_2d(zt)
        np.savetxt(out / "target_pca.csv", xy, delimiter=",", header="pc1,pc2", comments="")


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    src = load_dataset(args.source, _fmt(args.source))
    tgt = load_dataset(args.target, _fmt(args.target))
    state, inf, report = pl.run(src, tgt, cfg)
    out = Path(args.out)
    _write_outputs(out, report, inf.target_embeddings, args.pca)
    np.savetxt(out / "assignment.csv", inf.target_assignment, fmt="%d", header="cluster", comments="")
    save_model(out / "model.ckpt", state)
    _print_summary(report)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, arrays, known = load_model(Path(args.checkpoint))
    if args.config or args.set:
        cfg = _load_cfg(args.config, args.set)
    tgt = load_dataset(args.target, _fmt(args.target))
    if (tgt.n_patches, tgt.patch_dim) != (model.n_patches, model.patch_dim):
        raise ShapeMismatch("target shape does not match the checkpoint")
    t0 = time.perf_counter()
    zt = pl.embed(model, pl.prepare(model, tgt))
    labels = None if np.any(tgt.labels < 0) else tgt.labels
    rng = np.random.default_rng(cfg.seed)
    inf = pl.cluster_embeddings(arrays["source_embeddings"], arrays["source_labels"].astype(np.int64), zt, known, cfg, rng, labels)
    report = pl.RunReport(
        losses={},
        warmup_losses=[],
        metrics=inf.metrics.as_dict() if inf.metrics else None,
        k=int(inf.k),
        entropy=pl.entropy_stats(inf.target_entropy, labels, known) if labels is not None else None,
        n_pseudo_pins=inf.n_pseudo_pins,
        epochs=0,
        inpaint_skipped=0,
        config=dataclasses.asdict(cfg),
        wall_clock_s=time.perf_counter() - t0,
    )
    out = Path(args.out)
    _write_outputs(out, report, zt, args.pca)
    np.savetxt(out / "assignment.csv", inf.target_assignment, fmt="%d", header="cluster", comments="")
    _print_summary(report)
    return EXIT_OK


def cmd_estimate_k(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    src = load_dataset(args.source, _fmt(args.source))
    tgt = load_dataset(args.target, _fmt(args.target))
    if args.checkpoint:
        model, _, _, _ = load_model(Path(args.checkpoint))
        xs, xt = pl.embed(model, pl.prepare(model, src)), pl.embed(model, pl.prepare(model, tgt))
    else:
        xs, xt = src.flat(), tgt.flat()
    known = src.known_classes
    x = np.vstack([xs, xt])
    pins = ce.PinSet.from_labels(np.arange(len(src)), np.searchsorted(np.asarray(known), src.labels))
    lo = cfg.k_min or len(known)
    rng = np.random.default_rng(cfg.seed)
    k = ce.estimate_k(x, pins, (lo, min(cfg.k_max, x.shape[0])), args.method or cfg.k_method, rng=rng, n_known=len(known))
    print(k)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read report {args.report}: {exc}") from exc
    m = data.get("metrics") or {}
    e = data.get("entropy") or {}
    lines = [f"K = {data.get('k')}", f"epochs = {data.get('epochs')}"]
    for key in ("all", "old", "new"):
        if key in m:
            lines.append(f"{key:>4}: {m[key]}")
    if e:
        lines.append(f"entropy known/novel = {e.get('known_mean')} / {e.get('novel_mean')}  (AUROC {e.get('auroc')})")
    for name, trace in sorted((data.get("losses") or {}).items()):
        if trace:
            lines.append(f"loss {name}: first {trace[0]:.4f} last {trace[-1]:.4f} ({len(trace)} epochs)")
    print("\n".join(lines))
    if args.csv:
        cols = ["k", "all", "old", "new", "entropy_auroc"]
        vals = [data.get("k"), m.get("all"), m.get("old"), m.get("new"), e.get("auroc")]
        Path(args.csv).write_text(",".join(cols) + "\n" + ",".join("" if v is None else str(v) for v in vals) + "\n")
    return EXIT_OK


def _print_summary(report: pl.RunReport) -> None:
    m = report.metrics
    if m:
        print(f"K={report.k} All={m['all']:.4f} Old={m['old']:.4f} New={m['new']:.4f}")
    else:
        print(f"K={report.k}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adgcd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key = value config file")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("generate", help="write a synthetic source/target pair")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train, cluster the target and write a report")
    common(t)
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--pca", action="store_true", help="also write a 2-D PCA of target embeddings")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="cluster a target set with a trained checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--target", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--pca", action="store_true")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("estimate-k", help="estimate the number of clusters")
    common(k)
    k.add_argument("--source", required=True)
    k.add_argument("--target", required=True)
    k.add_argument("--checkpoint", help="embed with this model instead of raw features")
    k.add_argument("--method", choices=["brent", "elbow"])
    k.set_defaults(func=cmd_estimate_k)

    r = sub.add_parser("report", help="summarize a report.json")
    r.add_argument("report")
    r.add_argument("--csv", help="also write a one-row CSV summary")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

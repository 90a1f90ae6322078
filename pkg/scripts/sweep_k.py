"""Train one benchmark seed, then print the K-selection curves on its embeddings:
the k-means objective with its log second difference (elbow) and the held-out
pin accuracy (Brent's score) for every K in the range.

    python3 scripts/sweep_k.py --seed 1 --k-max 20
"""

import argparse
import dataclasses

import numpy as np

from adgcd import benchmark as bm
from adgcd import clustering_eval as ce
from adgcd import pipeline as pl
from adgcd.dataio import generate_synthetic


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k-max", type=int, default=20)
    args = ap.parse_args()

    source, target = generate_synthetic(dataclasses.replace(bm.BENCHMARK_DATA, seed=args.seed))
    cfg = dataclasses.replace(bm.BENCHMARK_TRAIN, seed=args.seed, k_fixed=7)
    state = pl.train(source, target, cfg)
    zs, zt = pl.embed(state.model, state.xs), pl.embed(state.model, state.xt)
    x, pins, n_pseudo = pl.clustering_pins(zs, state.ys, zt, state.known, cfg)
    n_known = len(state.known)
    print(f"{len(x)} points, {len(pins.index)} pins ({n_pseudo} pseudo)")

    lo, hi = n_known, args.k_max
    elbow, ks, curve = ce.elbow_k(x, pins, (lo, hi), rng=args.seed, n_known=n_known, n_init=cfg.n_init, return_curve=True)
    score = ce.holdout_score_fn(x, pins, rng=args.seed, n_known=n_known, n_init=cfg.n_init)
    brent, probes = ce.brent_k(x, pins, (lo, hi), rng=args.seed, n_known=n_known, return_probes=True)

    logo = np.log(np.maximum(curve, 1e-300))
    print(" K   objective   d2(log)  holdout")
    for i, k in enumerate(ks):
        d2 = logo[i - 1] - 2 * logo[i] + logo[i + 1] if 0 < i < len(ks) - 1 else float("nan")
        s = score(k) if lo <= k <= hi else float("nan")
        mark = " <- brent probe" if int(k) in probes else ""
        print(f"{k:2d}  {curve[i]:10.3f}  {d2:8.4f}  {s:7.3f}{mark}")
    print(f"elbow K = {elbow}, brent K = {brent}")


if __name__ == "__main__":
    main()

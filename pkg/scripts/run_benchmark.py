"""Run the synthetic benchmark over the default seeds and print per-seed results.

    python3 scripts/run_benchmark.py                       # estimated K (elbow)
    python3 scripts/run_benchmark.py --set k_fixed=7       # true K
    python3 scripts/run_benchmark.py --k-methods brent elbow
"""

import argparse

import numpy as np

from adgcd import benchmark as bm
from adgcd.pipeline import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(bm.SEEDS))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="training config override")
    ap.add_argument("--k-methods", nargs="*", default=[], help="also run these K estimators on the embeddings")
    args = ap.parse_args()

    train = TrainConfig.from_text(bm.BENCHMARK_TRAIN.to_text() + "\n".join(args.set))
    runs = []
    for seed in args.seeds:
        r = bm.run_seed(seed, train, k_methods=tuple(args.k_methods))
        runs.append(r)
        ks = " ".join(f"{m}={k}" for m, k in r.k_estimates.items())
        print(
            f"seed {seed}: K {r.k:2d}  all {r.all:.3f}  old {r.old:.3f}  new {r.new:.3f}  "
            f"raw k-means {r.baseline_all:.3f}  auroc {r.auroc:.3f}  {r.seconds:.0f}s {ks}",
            flush=True,
        )
    mean = lambda f: float(np.mean([f(r) for r in runs]))  # noqa: E731
    print(
        f"mean:    all {mean(lambda r: r.all):.3f}  old {mean(lambda r: r.old):.3f}  new {mean(lambda r: r.new):.3f}  "
        f"raw k-means {mean(lambda r: r.baseline_all):.3f}  auroc {mean(lambda r: r.auroc):.3f}"
    )


if __name__ == "__main__":
    main()

"""Structure recovery on the synthetic portfolio under different black boxes.

For each seed the script distills a surrogate from a 20k-row draw and reports
whether the selected group counts, the dropped noise features and the
interaction set match the generator. The black box is one of:

``truth``
    the generating rate function itself;
``in-sample``
    a Poisson GBM fitted to the same rows that are distilled;
``independent``
    a Poisson GBM fitted to an independent draw of ``--train-rows`` rows.

Usage::

    python3 benchmarks/recovery_sensitivity.py --mode independent --trees 136 300 --seeds 20
"""
import argparse
import time

from pdsurrogate import synth
from pdsurrogate.blackbox import GbmParams, train_gbm
from pdsurrogate.evaluate import delta_deviance
from pdsurrogate.pipeline import MaidrrConfig, TuneReport, autotune

SEED_OFFSET = 100_000


def black_box(mode, ds, seed, trees, train_rows, learning_rate, min_node_size):
    if mode == "truth":
        return synth.true_oracle()
    train = ds if mode == "in-sample" else synth.make_synthetic(train_rows, seed + SEED_OFFSET)
    params = GbmParams(T_max=trees, learning_rate=learning_rate, min_node_size=min_node_size, seed=seed)
    return train_gbm(train, params)


def run(args, trees):
    truth = synth.truth()
    hits = dict(counts=0, noise=0, pair=0)
    worst_dd = float("-inf")
    t0 = time.time()
    for seed in range(args.seeds):
        ds = synth.make_synthetic(args.rows, seed)
        oracle = black_box(args.mode, ds, seed, trees, args.train_rows, args.learning_rate, args.min_node_size)
        report = TuneReport()
        model = autotune(oracle, ds, MaidrrConfig(seed=seed), report)
        k = {g.feature: g.k for g in model.marginal_groupings}
        hits["counts"] += all(k.get(f) == v for f, v in truth["k"].items())
        hits["noise"] += not any(f in k for f in truth["noise"])
        hits["pair"] += tuple(truth["pair"]) in model.I
        dd = delta_deviance(model.predict(ds), synth.true_rate(ds.X) * ds.exposure, ds.y)
        worst_dd = max(worst_dd, dd)
        if args.verbose:
            print(f"  seed {seed:2d}: groups {k} pairs {model.I} lambda {report.lambda_marg:.2g}", flush=True)
    label = "-" if args.mode == "truth" else trees
    print(f"{args.mode:12s} trees={label!s:>4s}  counts {hits['counts']}/{args.seeds}  "
          f"noise dropped {hits['noise']}/{args.seeds}  pair {hits['pair']}/{args.seeds}  "
          f"worst dD {worst_dd:.3f}%  {time.time() - t0:.0f}s", flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=["truth", "in-sample", "independent"], default="independent")
    ap.add_argument("--trees", type=int, nargs="+", default=[136, 300])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--train-rows", type=int, default=60_000)
    ap.add_argument("--learning-rate", type=float, default=0.05)
    ap.add_argument("--min-node-size", type=int, default=50)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    for trees in ([0] if args.mode == "truth" else args.trees):
        run(args, trees)


if __name__ == "__main__":
    main()

"""Compiled kernels against the numpy fallback.

Times each hot kernel on representative inputs and checks that both
backends return the same numbers. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from pdsurrogate import _pykernels
from pdsurrogate.blackbox import GbmParams, _Flat, train_gbm
from pdsurrogate.synth import make_synthetic

try:
    from pdsurrogate import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    m = 400
    z = np.sort(rng.normal(size=m))
    w = rng.uniform(0.1, 1.0, m)
    yield "dp_cluster (m=400, kmax=15)", lambda mod: mod.dp_cluster(z, w, 15, 1e-12)

    n, p, nb = 100_000, 5, 64
    bins = np.ascontiguousarray(rng.integers(0, nb, (n, p)).astype(np.int32))
    rows = np.sort(rng.choice(n, 75_000, replace=False)).astype(np.int64)
    g, h = rng.normal(size=n), rng.uniform(0.1, 2.0, n)
    yield "build_histograms (75k rows, 5 features)", lambda mod: mod.build_histograms(bins, rows, g, h, nb)

    ds = make_synthetic(5_000, 0)
    model = train_gbm(ds, GbmParams(T_max=200, learning_rate=0.05, seed=0))
    flat = _Flat(model.trees)
    X = np.ascontiguousarray(make_synthetic(50_000, 1).X)
    yield "predict_ensemble (200 trees, 50k rows)", lambda mod: mod.predict_ensemble(X, *flat.arrays)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; reinstall without PDSURROGATE_NO_EXT")
    rng = np.random.default_rng(0)
    print(f"{'kernel':44s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}  agree")
    for name, fn in cases(rng):
        t_py, out_py = best_of(lambda: fn(_pykernels), args.repeat)
        t_c, out_c = best_of(lambda: fn(_ckernels), args.repeat)
        pa = out_py if isinstance(out_py, tuple) else (out_py,)
        ca = out_c if isinstance(out_c, tuple) else (out_c,)
        agree = all(np.allclose(np.asarray(a), np.asarray(b), rtol=1e-12, atol=1e-12) for a, b in zip(pa, ca))
        print(f"{name:44s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:7.1f}x  {agree}")


if __name__ == "__main__":
    main()

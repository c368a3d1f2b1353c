"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_backends.py [--rows 62485] [--repeat 3]

Times the split-gain kernel, a single deep Gini tree, a small forest and a
small booster on noisy synthetic data of Kaggle size, and checks that both
backends produce the same model.
"""
import argparse
import time

import numpy as np

from ransomdet import _backend, forest, gbdt
from ransomdet.dataset import synth_generate
from ransomdet.tree import GiniObjective, GrowParams, SortedColumns, grow


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=62485)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--trees", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=50)
    args = ap.parse_args(argv)

    ds = synth_generate(args.rows // 2, seed=0, label_noise=0.05)
    X, y = ds.X, ds.y.astype(float)
    cols = SortedColumns.from_matrix(X)
    obj = GiniObjective(y)
    feats = np.arange(X.shape[1], dtype=np.int64)

    cases = {
        "split_gains (root, all features)": lambda: _backend.kernels().split_gains(
            cols.xt, cols.order, feats, obj.s1, obj.s2, obj.w, obj.kind, 0.0, 0.0, 1.0),
        "gini tree depth 32": lambda: grow(cols, obj, GrowParams(max_depth=32), np.random.default_rng(0)),
        f"forest {args.trees} trees": lambda: forest.train_arrays(X, y, forest.ForestParams(n_trees=args.trees)),
        f"gbdt {args.rounds} rounds": lambda: gbdt.train_arrays(X, y, gbdt.GbdtParams(n_rounds=args.rounds)),
    }
    names = _backend.available()
    print(f"rows={len(y)} features={X.shape[1]} backends={names} repeat={args.repeat}")
    print(f"{'case':36s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, fn in cases.items():
        times, results = [], []
        for n in names:
            with _backend.use(n):
                t, out = timed(fn, args.repeat)
            times.append(t)
            results.append(out)
        line = f"{label:36s}" + "".join(f"{t:11.3f}s" for t in times)
        if len(names) == 2:
            line += f"{times[1] / times[0]:11.1f}x"
            a, b = results
            same = np.array_equal(a, b) if isinstance(a, np.ndarray) else (
                a == b if not hasattr(a, "to_payload") else a.to_payload() == b.to_payload())
            line += "" if same else "   MISMATCH"
        print(line)


if __name__ == "__main__":
    main()

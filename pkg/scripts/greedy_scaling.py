"""Wall time of centralized greedy as the ground set doubles at fixed k.

    python3 scripts/greedy_scaling.py --sizes 100000,200000,400000,800000 --k 1000
"""

import argparse
import time

import numpy as np

from pairsub.core import NeighborGraph, ObjectiveParams, UtilityTable
from pairsub.greedy import greedy_select


def random_graph(n, degree, rng):
    a = rng.integers(0, n, n * degree // 2)
    b = rng.integers(0, n, n * degree // 2)
    keep = a != b
    pairs = np.unique(np.stack([np.minimum(a, b)[keep], np.maximum(a, b)[keep]], axis=1), axis=0)
    s = rng.random(len(pairs))
    src, dst = pairs[:, 0], pairs[:, 1]
    return NeighborGraph.from_edges(np.r_[src, dst], np.r_[dst, src], np.r_[s, s], nodes=np.arange(n))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100000,200000,400000,800000")
    ap.add_argument("--k", type=int, default=1000)
    ap.add_argument("--degree", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    p = ObjectiveParams.balanced(0.9)
    prev = None
    print("n\tseconds\tratio")
    for n in map(int, args.sizes.split(",")):
        g = random_graph(n, args.degree, rng)
        u = UtilityTable(np.arange(n), rng.random(n))
        greedy_select(None, g, u, p, args.k)
        best = min(_timed(lambda: greedy_select(None, g, u, p, args.k)) for _ in range(args.repeats))
        print(f"{n}\t{best:.4f}\t{best / prev:.2f}" if prev else f"{n}\t{best:.4f}\t")
        prev = best


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


if __name__ == "__main__":
    main()

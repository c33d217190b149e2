"""Partitions x rounds grid of normalized distributed-greedy scores on synthetic data.

Writes the raw rows as CSV (same schema as ``pairsub bench``) and prints the
seed-averaged matrix for each adaptive mode.

    python3 scripts/trend_grid.py --seeds 0,1,2,3,4 --out grid.csv
"""

import argparse
import sys
from collections import defaultdict
from statistics import mean

from pairsub.cli import bench_rows, write_bench_csv
from pairsub.synthetic import MixtureConfig, make_dataset


def parse_ints(text):
    return [int(x) for x in text.split(",") if x]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--temperature", type=float, default=16.0)
    ap.add_argument("--alpha", type=float, default=0.9)
    ap.add_argument("--fraction", type=float, default=0.1)
    ap.add_argument("--partitions", default="1,2,4,8,16,32")
    ap.add_argument("--rounds", default="1,2,4,8,16,32")
    ap.add_argument("--gamma", type=float, default=0.75)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--worst-case", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="trend_grid.csv")
    args = ap.parse_args(argv)

    partitions, rounds = parse_ints(args.partitions), parse_ints(args.rounds)
    rows = []
    for seed in parse_ints(args.seeds):
        cfg = MixtureConfig(n=args.n, dim=args.dim, temperature=args.temperature, seed=seed)
        data = make_dataset(cfg, workers=args.workers)
        rows += bench_rows(data.graph, data.utilities, [args.alpha], [args.fraction], partitions, rounds,
                           [args.gamma], [True, False], [seed], worst_case=args.worst_case,
                           workers=args.workers)
        print(f"seed {seed} done", file=sys.stderr)
    write_bench_csv(args.out, rows)

    cells = defaultdict(list)
    for r in rows:
        if r["mode"] != "central":
            cells[(r["mode"], r["adaptive"], r["partitions"], r["rounds"])].append(r["normalized_score"])
    for mode in sorted({key[0] for key in cells}):
        for adaptive in (True, False):
            print(f"\n{mode}, adaptive={adaptive}: mean normalized score (rows: partitions, cols: rounds)")
            print("m\\r " + "".join(f"{r:>8}" for r in rounds))
            for m in partitions:
                vals = [mean(cells[(mode, adaptive, m, r)]) for r in rounds]
                print(f"{m:>3} " + "".join(f"{v:8.1f}" for v in vals))


if __name__ == "__main__":
    main()

"""Grown / excluded counts and round numbers of exact and approximate bounding.

    python3 scripts/bounding_table.py --n 20000 --alphas 0.9,0.5,0.1
    python3 scripts/bounding_table.py --dim 256 --separation 0.5 --alphas 0.9

The default mixture has dense neighborhoods and exact bounding decides
little there; the second call uses weaker similarities.
"""

import argparse
import math
import time

from pairsub.bounding import SamplingPolicy, bound
from pairsub.core import ObjectiveParams
from pairsub.synthetic import MixtureConfig, make_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--separation", type=float, default=1.5)
    ap.add_argument("--alphas", default="0.9,0.5,0.1")
    ap.add_argument("--fractions", default="0.1,0.5")
    ap.add_argument("--sample-fractions", default="0.3,0.7")
    args = ap.parse_args(argv)

    data = make_dataset(MixtureConfig(n=args.n, dim=args.dim, separation=args.separation, seed=args.seed))
    g, u = data.graph, data.utilities
    policies = [SamplingPolicy()] + [
        SamplingPolicy(mode, float(p), args.seed)
        for mode in ("uniform", "weighted") for p in args.sample_fractions.split(",")
    ]
    print("alpha\tfraction\tpolicy\tgrown\texcluded\tremaining\tgrow_rounds\tshrink_rounds\tseconds")
    for alpha in map(float, args.alphas.split(",")):
        p = ObjectiveParams.balanced(alpha)
        for fraction in map(float, args.fractions.split(",")):
            k = math.ceil(fraction * len(u))
            for pol in policies:
                t0 = time.perf_counter()
                st = bound(None, g, u, p, k, pol)
                name = pol.mode.value if pol.exact else f"{pol.mode.value}:{pol.fraction}"
                gr, rem, ex = st.counts()
                print(f"{alpha}\t{fraction}\t{name}\t{gr}\t{ex}\t{rem}\t{st.grow_rounds}\t{st.shrink_rounds}"
                      f"\t{time.perf_counter() - t0:.2f}")


if __name__ == "__main__":
    main()

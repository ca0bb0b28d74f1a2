"""How network shape controls what a dishonest operator can skim.

Walks the topology classes (series chain, parallel paths, aggregation
tree, series-parallel, entangled mesh), prints each class's pairwise
capacity-sharing profile, and fits the log-log scaling law of the
extractable increment against the class's size parameter.
"""

import argparse

from credmarket import (
    UniformPrior,
    gamma_distribution,
    generate_topology,
    make_oracle,
    nonmodularity_profile,
    scaling_sweep,
)

GRIDS = {
    "series": [2, 4, 8, 16],
    "parallel": [1, 2, 4, 8],
    "tree": [1, 2, 3, 4],
    "entangled": [4, 6, 8, 12],
}


def show_profile(name, dag):
    oracle = make_oracle(dag)
    prof = nonmodularity_profile(oracle)
    print(
        f"  {name:10s} n={oracle.n}  sharing pairs={prof.sharing_pair_count:3d}"
        f"  total gamma={prof.Gamma:.2f}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=3, help="sweep replicates")
    args = parser.parse_args()

    print("pairwise capacity sharing per witness instance:")
    show_profile("series", generate_topology("series", n=4, d=4))
    show_profile("parallel", generate_topology("parallel", n=8, k=4))
    show_profile("tree", generate_topology("tree", h=3, beta=2))
    show_profile("sp", generate_topology("sp", n=8))
    show_profile("entangled", generate_topology("entangled", n=8))

    print("\nscaling of the extractable increment (log-log slope):")
    seeds = tuple(range(args.seeds))
    for cls, grid in GRIDS.items():
        fit = scaling_sweep(cls, grid, seeds=seeds)
        lo, hi = fit.slope_ci
        print(f"  {cls:10s} grid={grid}  slope={fit.slope:.3f}  ci=({lo:.3f}, {hi:.3f})")
    print("  linear classes hug slope 1; the entangled mesh grows ~quadratically.")

    print("\nvalue-weighted gap distributions (500 draws, uniform values on [1,11]):")
    prior = UniformPrior(1.0, 11.0)
    for cls in ("tree", "sp", "entangled"):
        dist = gamma_distribution(cls, prior, n_samples=500, seed=0)
        print(f"  {cls:10s} latency={dist['latency_ms']:3.0f}ms  mean gap={dist['mean']:.3f}")
    print("  flatter networks answer faster and leave more value on shared edges.")


if __name__ == "__main__":
    main()

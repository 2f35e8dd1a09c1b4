"""Slow decay of the origin connection probability in a zeta(1.5) environment."""

from stretchperc.experiments import HeavyTailPlan, heavy_tail_experiment
from stretchperc.rng import Stream


def main():
    plan = HeavyTailPlan.from_eta(0.5, cell_budget=10**6)
    res = heavy_tail_experiment("zeta:1.5", plan, 0.9, [10, 100, 1000], 200, Stream(9))
    for row in res["connection_curve"]:
        lo, hi = row["ci"]
        print(f"N={row['N']:>5}  P(o <-> boundary) ~ {row['estimate']:.3f}  [{lo:.3f}, {hi:.3f}]")
    for row in res["bounds"]:
        print(f"i={row['i']}  used by {row['n']:>3} environments  "
              f"horizontal hits {row['hits_h']}  bound {row['bound_h']:.3g}")


if __name__ == "__main__":
    main()

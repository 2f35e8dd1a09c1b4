"""Stationary delay, coupling time and decoupling gaps for two small laws."""

import numpy as np

from stretchperc.renewal import (Dirac, Geometric, Stationary, estimate_c1, parse_spec,
                                 sample_coupling_times, sample_forward_recurrence,
                                 stationary_delay_pmf)
from stretchperc.rng import Stream


def main():
    stream = Stream(1)
    geo = Geometric(0.5)
    rho = stationary_delay_pmf(geo, 6).pmf
    Z = sample_forward_recurrence(geo, Stationary(), [25], 200_000, stream.child(0))[:, 0]
    emp = np.bincount(Z, minlength=7)[:7] / Z.size
    print("k   rho_k     empirical")
    for k, (a, b) in enumerate(zip(rho, emp)):
        print(f"{k}   {a:.5f}   {b:.5f}")

    T = sample_coupling_times(geo, Dirac(0), Stationary(), 10**6, 50_000, stream.child(1))
    print(f"\ncoupling time: mean {T.mean():.3f} (exact 4)")

    rep = estimate_c1(parse_spec("uniform:1,2"), 1.0, 8, range(1, 9), 200_000, stream.child(2))
    print("\nn   gap        exact")
    for e in rep.estimates:
        print(f"{e.n}   {e.gap:+.5f}   {e.exact_gap:+.5f}")


if __name__ == "__main__":
    main()

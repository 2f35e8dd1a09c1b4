"""Exact versus sampled crossing probabilities of a 3x2 box in three formulations."""

import math

import numpy as np

from stretchperc import _kernels as K
from stretchperc import oracles
from stretchperc.percolation import EnvironmentWindow, edge_prob_arrays, sample_window
from stretchperc.rng import Stream

W, H, N = 3, 2, 50_000


def main():
    env = EnvironmentWindow.from_gaps([1, 3, 1, 2, 1, 1, 2, 1])
    print("formulation        p     exact    sampled   z")
    for i, form in enumerate(("inhomogeneous", "dilute", "stretched_lengths")):
        for j, p in enumerate((0.3, 0.5, 0.7)):
            ph, pv = edge_prob_arrays(env, p, form, W)
            exact = oracles.exact_crossing_probability(W, H, "h", ph, pv)
            win = sample_window(env, p, (W, H * N), form, Stream(5).child(i, j))
            h3 = np.ascontiguousarray(win.h.reshape(N, H, W), dtype=np.uint8)
            v3 = np.ascontiguousarray(win.v.reshape(N, H, W), dtype=np.uint8)
            est = K.rect_crossing_batch(h3, v3, 0, W, 0, H, 0).mean()
            z = (est - exact) / math.sqrt(exact * (1 - exact) / N)
            print(f"{form:<18} {p:.1f}   {exact:.5f}  {est:.5f}  {z:+.2f}")


if __name__ == "__main__":
    main()

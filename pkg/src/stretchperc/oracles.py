"""Exact small-instance oracles.

These deliberately avoid the production code paths: renewal quantities come
from the transfer matrix of the forward-recurrence chain, and crossing
probabilities from exhaustive enumeration with a vectorised flood fill
(no union-find).
"""

from __future__ import annotations

import numpy as np

from .renewal import CylinderEvent, Geometric, InterarrivalSpec, stationary_delay_pmf

# --------------------------------------------------------------------------
# forward-recurrence chain
# --------------------------------------------------------------------------


def _finite_table(spec: InterarrivalSpec):
    if not (spec.integer_valued and spec.finite_support):
        return None
    vals = spec.support().astype(np.int64)
    return vals, spec.pmf(vals)


def transition_matrix(spec: InterarrivalSpec) -> np.ndarray:
    """Transition matrix of Z on {0, ..., max support - 1}."""
    vals, probs = _finite_table(spec)
    M = int(vals.max())
    P = np.zeros((M, M))
    for z in range(1, M):
        P[z, z - 1] = 1.0
    for k, pk in zip(vals, probs):
        P[0, k - 1] += pk
    return P


def stationary_vector(spec: InterarrivalSpec) -> np.ndarray:
    vals, _ = _finite_table(spec)
    M = int(vals.max())
    rho = stationary_delay_pmf(spec, M - 1).pmf
    return rho / rho.sum()


def cylinder_probability(spec: InterarrivalSpec, positions, values) -> float | None:
    """Exact P(Y_t = b for all (t, b)) under the stationary delay.

    Available for finite-support integer laws (matrix powers) and for
    geometric laws (stationary Y is i.i.d. Bernoulli(q)).  Returns None
    otherwise.
    """
    req: dict[int, int] = {}
    for t, b in zip(positions, values):
        if req.get(t, b) != b:
            return 0.0
        req[t] = b
    if isinstance(spec, Geometric):
        out = 1.0
        for b in req.values():
            out *= spec.q if b else 1.0 - spec.q
        return out
    if _finite_table(spec) is None:
        return None
    P = transition_matrix(spec)
    vec = stationary_vector(spec)
    last = max(req) if req else 0
    for t in range(last + 1):
        if t in req:
            mask = np.zeros(len(vec), dtype=bool)
            mask[0] = True
            vec = np.where(mask if req[t] else ~mask, vec, 0.0)
        if t < last:
            vec = vec @ P
    return float(vec.sum())


def exact_gap(spec, event_a: CylinderEvent, event_b: CylinderEvent) -> float | None:
    pa = cylinder_probability(spec, event_a.positions, event_a.values)
    if pa is None:
        return None
    pb = cylinder_probability(spec, event_b.positions, event_b.values)
    pab = cylinder_probability(spec, event_a.positions + event_b.positions,
                               event_a.values + event_b.values)
    return pab - pa * pb


def exact_covariance(spec, m: int, n: int) -> float | None:
    """Cov(Y_m, Y_{m+n}) under the stationary delay."""
    return exact_gap(spec, CylinderEvent.renewal_at(m), CylinderEvent.renewal_at(m + n))


def stationary_window_law(spec: InterarrivalSpec, w: int, cutoff: float = 1e-13) -> dict | None:
    """Law of (Z_0, ..., Z_w) under the stationary delay, as {path: prob}.

    Paths of probability below ``cutoff`` are dropped; the missing mass is
    what a caller should lump into an "other" category.
    """
    if not spec.integer_valued:
        return None
    try:
        mean = spec.mean()
    except Exception:
        return None
    if not np.isfinite(mean):
        return None
    if spec.finite_support:
        K = int(spec.support().max())
    else:
        K = 64
        while spec.sf(K) / mean > cutoff and K < 2**16:
            K *= 2
    z = np.arange(K + 1)
    rho = spec.sf(z) / mean
    steps = np.arange(1, K + 2)
    jump = spec.pmf(steps)
    law = {(int(k),): float(r) for k, r in zip(z, rho) if r > cutoff}
    for _ in range(w):
        nxt = {}
        for path, pr in law.items():
            last = path[-1]
            if last > 0:
                nxt[path + (last - 1,)] = pr
                continue
            for s, js in zip(steps, jump):
                q = pr * js
                if q > cutoff:
                    nxt[path + (int(s) - 1,)] = q
        law = nxt
    return law


def coupling_survival(spec: InterarrivalSpec, delay_a: int, delay_b: int, t: int) -> float:
    """Exact P(T > t) for two copies with Dirac delays, by the product chain."""
    P = transition_matrix(spec)
    M = P.shape[0]
    joint = np.zeros((M + max(delay_a, delay_b) + 1,) * 2)
    # Z_0 = delay for a Dirac delay; pad the chain so large delays fit
    size = joint.shape[0]
    Q = np.zeros((size, size))
    Q[:M, :M] = P
    for z in range(M, size):
        Q[z, z - 1] = 1.0
    joint[delay_a, delay_b] = 1.0
    for _ in range(t):
        joint = Q.T @ joint @ Q
        joint[0, 0] = 0.0  # absorbed: joint renewal at k >= 1
    return float(joint.sum())


# --------------------------------------------------------------------------
# crossing enumeration
# --------------------------------------------------------------------------


def rectangle_edges(w: int, h: int):
    """Edges of R([0,w)x[0,h)) as (u, v) vertex pairs, vertex = (x, y).

    Horizontal edges from every (x, y) with x < w, y < h, then vertical ones.
    """
    edges = []
    for y in range(h):
        for x in range(w):
            edges.append(((x, y), (x + 1, y), "h", x))
    for y in range(h):
        for x in range(w):
            edges.append(((x, y), (x, y + 1), "v", x))
    return edges


def crossing_indicator_table(w: int, h: int, direction: str) -> tuple[np.ndarray, list]:
    """Crossing indicator for every configuration of R([0,w)x[0,h)).

    Configuration ``c`` opens edge ``e`` iff bit ``e`` of ``c`` is set.
    Returns the boolean vector of length 2**E and the edge list.
    """
    edges = rectangle_edges(w, h)
    E = len(edges)
    if E > 22:
        raise ValueError("too many edges for exhaustive enumeration")
    configs = np.arange(2**E, dtype=np.uint32)
    bits = [((configs >> e) & 1).astype(bool) for e in range(E)]
    verts = [(x, y) for y in range(h + 1) for x in range(w + 1)]
    if direction == "h":
        src = [u for u in verts if u[0] == 0]
        dst = [u for u in verts if u[0] == w]
    else:
        src = [u for u in verts if u[1] == 0]
        dst = [u for u in verts if u[1] == h]
    reach = {u: np.full(2**E, u in src) for u in verts}
    changed = True
    while changed:
        changed = False
        for e, (a, b, _, _) in enumerate(edges):
            na = reach[a] | (reach[b] & bits[e])
            nb = reach[b] | (reach[a] & bits[e])
            if (na != reach[a]).any() or (nb != reach[b]).any():
                changed = True
                reach[a], reach[b] = na, nb
    hit = np.zeros(2**E, dtype=bool)
    for u in dst:
        hit |= reach[u]
    return hit, edges


def configuration_weights(probs: np.ndarray) -> np.ndarray:
    """Probability of each configuration given per-edge open probabilities."""
    E = len(probs)
    configs = np.arange(2**E, dtype=np.uint32)
    wts = np.ones(2**E)
    for e, pe in enumerate(probs):
        wts *= np.where((configs >> e) & 1, pe, 1.0 - pe)
    return wts


def exact_crossing_probability(w: int, h: int, direction: str, horizontal_probs, vertical_probs) -> float:
    """Exact crossing probability of R([0,w)x[0,h)).

    ``horizontal_probs[x]`` / ``vertical_probs[x]`` give the open probability
    of edges leaving column x (probabilities depend only on the column).
    """
    hit, edges = crossing_indicator_table(w, h, direction)
    probs = np.array([horizontal_probs[x] if kind == "h" else vertical_probs[x]
                      for _, _, kind, x in edges], dtype=float)
    return float(configuration_weights(probs)[hit].sum())


def enumerate_configurations(E: int):
    """All 0/1 vectors of length E as a (2**E, E) uint8 array."""
    configs = np.arange(2**E, dtype=np.uint32)
    return ((configs[:, None] >> np.arange(E)) & 1).astype(np.uint8)


__all__ = [
    "transition_matrix", "stationary_vector", "cylinder_probability", "exact_gap",
    "exact_covariance", "stationary_window_law", "coupling_survival",
    "rectangle_edges", "crossing_indicator_table", "configuration_weights",
    "exact_crossing_probability", "enumerate_configurations",
]

"""Contraction of short gaps and the shifted dual lattice.

Dual coordinates: dual vertex (u, v) stands for the point (u - 1/2, v - 1/2).

* dual horizontal (u, v)-(u+1, v) crosses the primal vertical (u, v-1)-(u, v);
  for v = 0 it crosses nothing and lies on the bottom semiaxis.
* dual vertical (u, v)-(u, v+1) crosses the primal horizontal (u-1, v)-(u, v);
  for u = 0 it lies on the left semiaxis.

Contracted columns: contracted column c merges ``zeta[c]`` consecutive primal
columns (the group closed by the (c+1)-th gap that is at least kappa).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .percolation import (EnvironmentWindow, PercWindow, Rectangle, edge_prob_arrays,
                          sample_window)
from .renewal import InterarrivalSpec
from .rng import as_generator


def choose_kappa(spec: InterarrivalSpec) -> float:
    """Largest kappa in (0, 1] with P(xi >= kappa) >= 1/2."""
    if spec.tail_ge(1.0) >= 0.5:
        return 1.0
    # P(xi >= k) only drops right after a support point, so the answer is one
    pts = np.asarray(spec.support(upto=1.0), dtype=float)
    pts = np.sort(pts[(pts > 0) & (pts <= 1.0)])[::-1]
    for s in pts:
        if spec.tail_ge(float(s)) >= 0.5:
            return float(s)
    raise ValueError(f"no kappa found for {spec}")


@dataclass(frozen=True)
class ContractionResult:
    kappa: float
    J: np.ndarray
    zeta: np.ndarray
    diagnostic: str = ""

    @property
    def Xi(self) -> EnvironmentWindow:
        """Environment whose gaps are the multiplicities zeta."""
        return EnvironmentWindow(self.zeta.astype(np.int64), 0)

    @property
    def empty(self) -> bool:
        return self.zeta.size == 0

    def group_of(self, ncols: int) -> np.ndarray:
        """Contracted column of every primal column 0..ncols-1 (-1 past the last full group)."""
        out = np.full(ncols, -1, dtype=np.int64)
        starts = np.concatenate([[0], self.J[:-1]])
        for c, (lo, hi) in enumerate(zip(starts, self.J)):
            out[lo:min(hi, ncols)] = c
        return out


def contract(env: EnvironmentWindow, kappa: float) -> ContractionResult:
    """J_k = index of the k-th gap >= kappa (1-based), zeta_k = J_k - J_{k-1}, J_0 = 0.

    Small gaps after the last large one form an incomplete group and are dropped.
    """
    gaps = np.asarray(env.gaps, dtype=float)
    J = np.flatnonzero(gaps >= kappa) + 1
    if J.size == 0:
        return ContractionResult(kappa, J, J.copy(), f"no gap >= {kappa} among {gaps.size} gaps")
    zeta = np.diff(np.concatenate([[0], J]))
    return ContractionResult(kappa, J, zeta.astype(np.int64))


# --------------------------------------------------------------------------
# the three enhancing operations
# --------------------------------------------------------------------------

def enhanced_probabilities(env: EnvironmentWindow, p: float, kappa: float, width: int):
    """Per-column probabilities after capping gaps at kappa and raising verticals to p^kappa."""
    g = np.minimum(np.asarray(env.gaps[:width], dtype=float), kappa)
    return np.power(p, g), np.full(width, p**kappa)


def enhance_window(window: PercWindow, kappa: float) -> PercWindow:
    """Operations (cap gaps at kappa, verticals at p^kappa) on shared uniforms.

    The result dominates ``window`` edge by edge.
    """
    if window.formulation != "inhomogeneous":
        raise ValueError("enhancement starts from an inhomogeneous window")
    ph, pv = enhanced_probabilities(window.env, window.p, kappa, window.width)
    return PercWindow(window.env, window.width, window.height, window.p, "enhanced", window.uh,
                      window.uv, ph, pv, window.uh < ph[None, :], window.uv < pv[None, :],
                      window.stream, kappa)


def contracted_width(contraction: ContractionResult, width: int) -> int:
    """Contracted columns whose group and closing edge fit in a primal window."""
    return int(np.sum(contraction.J <= width))


def contract_window(enhanced: PercWindow, contraction: ContractionResult) -> PercWindow:
    """Contract every short horizontal edge of an enhanced window.

    Contracted vertical c is open iff one of its merged verticals is; the
    horizontal from c to c+1 is the enhanced large-gap edge.
    """
    Wc = contracted_width(contraction, enhanced.width)
    if Wc == 0:
        raise ValueError("no complete contracted column inside the window")
    starts = np.concatenate([[0], contraction.J[:-1]])[:Wc]
    ends = contraction.J[:Wc]
    v = np.logical_or.reduceat(enhanced.v, starts, axis=1)[:, :Wc]
    h = enhanced.h[:, ends - 1]
    # merged-column uniforms: min of the group's uniforms keeps "open iff any open"
    uv = np.minimum.reduceat(enhanced.uv, starts, axis=1)[:, :Wc]
    uh = enhanced.uh[:, ends - 1]
    env = EnvironmentWindow(contraction.zeta.astype(np.int64), 0)
    ph, pv = edge_prob_arrays(env, enhanced.p, "contracted", Wc, contraction.kappa)
    return PercWindow(env, Wc, enhanced.height, enhanced.p, "contracted", uh, uv, ph, pv, h, v,
                      enhanced.stream, contraction.kappa, ("mapped from an inhomogeneous window",))


def contraction_law(env: EnvironmentWindow, contraction: ContractionResult, p: float, width: int):
    """Per-edge probabilities of the contracted window implied by the operations.

    Computed from the enhanced primal probabilities (no sampling):
    vertical = 1 - prod(1 - merged), horizontal = closing edge's probability.
    """
    ph, pv = enhanced_probabilities(env, p, contraction.kappa, width)
    Wc = contracted_width(contraction, width)
    starts = np.concatenate([[0], contraction.J[:-1]])[:Wc]
    ends = contraction.J[:Wc]
    vert = np.array([1.0 - np.prod(1.0 - pv[s:e]) for s, e in zip(starts, ends)])
    return ph[ends - 1], vert


def homomorphism_violations(enhanced: PercWindow, contracted: PercWindow,
                            contraction: ContractionResult) -> int:
    """Open enhanced edges whose endpoints land in different contracted components."""
    Wc = contracted.width
    width = int(contraction.J[Wc - 1])  # primal columns covered by full groups
    group = contraction.group_of(width + 1)
    group[width] = Wc  # right boundary column of the last group's closing edge
    lab = K.component_labels(contracted.h.astype(np.uint8), contracted.v.astype(np.uint8),
                             0, Wc, 0, contracted.height, 0, Wc - 1, 0, contracted.height - 1,
                             0, Wc - 1, 0, contracted.height - 1)
    bad = 0
    H = enhanced.height
    for y in range(H):
        for x in range(width):
            if enhanced.h[y, x] and lab[y, group[x]] != lab[y, group[x + 1]]:
                bad += 1
            if enhanced.v[y, x] and lab[y, group[x]] != lab[y + 1, group[x]]:
                bad += 1
    return bad


# --------------------------------------------------------------------------
# dual windows
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualWindow:
    """Dual configuration with bottom and left semiaxes.

    ``hd`` and ``vd`` are padded to shape (H+1, W+1): ``hd[v, u]`` for
    u < W, v <= H and ``vd[v, u]`` for u <= W, v < H.
    """

    primal: PercWindow
    hd: np.ndarray
    vd: np.ndarray
    p_star: float
    zeta: np.ndarray
    kappa: float

    @property
    def width(self) -> int:
        return self.primal.width

    @property
    def height(self) -> int:
        return self.primal.height

    @property
    def bottom_semiaxis(self) -> np.ndarray:
        return self.hd[0, : self.width]

    @property
    def left_semiaxis(self) -> np.ndarray:
        return self.vd[: self.height, 0]

    def complement_ok(self) -> bool:
        W, H = self.width, self.height
        return (np.array_equal(self.hd[1:H + 1, :W], ~self.primal.v)
                and np.array_equal(self.vd[:H, 1:W + 1], ~self.primal.h))

    def edge_probabilities(self):
        """Marginal open probability of every dual edge, from the primal probabilities."""
        W, H = self.width, self.height
        ph, pv = self.primal.ph, self.primal.pv
        hp = np.zeros((H + 1, W + 1))
        vp = np.zeros((H + 1, W + 1))
        hp[0, :W] = (1.0 - self.primal.p**self.kappa) ** self.zeta[:W]
        hp[1:H + 1, :W] = 1.0 - pv[None, :]
        vp[:H, 0] = 1.0 - self.primal.p**self.kappa
        vp[:H, 1:W + 1] = 1.0 - ph[None, :]
        return hp, vp

    def as_window(self) -> PercWindow:
        """The dual restricted to a W x H window, as an inhomogeneous window."""
        W, H = self.width, self.height
        env = EnvironmentWindow(self.zeta.astype(np.int64), 0)
        ph, pv = edge_prob_arrays(env, self.p_star, "inhomogeneous", W)
        z = np.zeros((H, W))
        return PercWindow(env, W, H, self.p_star, "inhomogeneous", z, z, ph, pv,
                          self.hd[:H, :W].copy(), self.vd[:H, :W].copy(), "dual")

    def dump(self) -> str:
        from .percolation import _rle, dump_window
        semi = [f"bottom {_rle(self.bottom_semiaxis)}", f"left {_rle(self.left_semiaxis)}"]
        return dump_window(self.primal, {"semiaxes": semi})


def dualize(primal: PercWindow, contraction: ContractionResult, stream) -> DualWindow:
    """Dual of a contracted-model window, with freshly sampled semiaxis edges."""
    if primal.formulation != "contracted":
        raise ValueError("dualize expects a contracted-model window")
    W, H = primal.width, primal.height
    zeta = np.asarray(contraction.zeta)
    if zeta.size < W or not np.array_equal(np.asarray(primal.env.gaps[:W]), zeta[:W]):
        raise ValueError("window columns do not match the contraction multiplicities")
    if primal.kappa is not None and abs(primal.kappa - contraction.kappa) > 1e-15:
        raise ValueError("window and contraction use different kappa")
    rng = as_generator(stream)
    pk = primal.p**contraction.kappa
    hd = np.zeros((H + 1, W + 1), dtype=bool)
    vd = np.zeros((H + 1, W + 1), dtype=bool)
    hd[0, :W] = rng.random(W) < (1.0 - pk) ** zeta[:W]
    vd[:H, 0] = rng.random(H) < 1.0 - pk
    hd[1:H + 1, :W] = ~primal.v
    vd[:H, 1:W + 1] = ~primal.h
    return DualWindow(primal, hd, vd, 1.0 - pk, zeta[:W].copy(), contraction.kappa)


def dual_for_box(dual_h, dual_v, box: Rectangle, primal_direction: str) -> bool:
    """Dual crossing blocking the primal crossing of ``box``."""
    a, b, c, d = box.a, box.b, box.c, box.d
    hd = np.ascontiguousarray(dual_h, dtype=np.uint8)
    vd = np.ascontiguousarray(dual_v, dtype=np.uint8)
    if primal_direction == "v":
        return bool(K.crossing_sub(hd, vd, a, b, c + 1, d, a, b - 1, c + 1, d,
                                   a + 1, b - 1, c + 1, d - 1, 0))
    return bool(K.crossing_sub(hd, vd, a + 1, b, c, d, a + 1, b - 1, c + 1, d - 1,
                               a + 1, b, c, d - 1, 1))


@dataclass(frozen=True)
class BlockingVerdict:
    primal: bool
    dual: bool

    @property
    def xor(self) -> bool:
        return self.primal != self.dual


def blocking_check(primal: PercWindow, dual: DualWindow, box: Rectangle,
                   direction: str = "v") -> BlockingVerdict:
    """Primal crossing of ``box`` versus the dual crossing that would block it."""
    from .percolation import rect_crossing
    W, H = primal.width, primal.height
    if box.a < 1 or box.c < 1 or box.b >= W or box.d >= H:
        raise ValueError(f"{box} touches the window boundary or a semiaxis")
    p_bit = rect_crossing(primal.h, primal.v, box, direction)
    d_bit = dual_for_box(dual.hd, dual.vd, box, direction)
    return BlockingVerdict(p_bit, d_bit)


def semicircuit_probe(dual: DualWindow, r: int) -> bool:
    """Open dual path from the left axis to the bottom axis around the origin.

    Uses only dual edges crossing primal edges of [0, r]^2, which makes it
    equivalent to the origin not reaching distance r in the primal.
    """
    if r < 1 or r > dual.width or r > dual.height:
        raise ValueError(f"radius {r} exceeds the {dual.width}x{dual.height} window")
    hd = np.ascontiguousarray(dual.hd, dtype=np.uint8)
    vd = np.ascontiguousarray(dual.vd, dtype=np.uint8)
    lab = K.component_labels(hd, vd, 0, r, 0, r, 0, r - 1, 1, r, 1, r, 0, r - 1)
    left = set(lab[1:r + 1, 0].tolist())
    return bool(left & set(lab[0, 1:r + 1].tolist()))


def origin_reaches(window: PercWindow, r: int) -> bool:
    """Origin joined to {max(x, y) = r} inside [0, r]^2."""
    h = np.ascontiguousarray(window.h[:r, :r], dtype=np.uint8)
    v = np.ascontiguousarray(window.v[:r, :r], dtype=np.uint8)
    return bool(K.cluster_radius(h, v, r, r) >= r)


def sample_contracted(contraction: ContractionResult, p: float, width: int, height: int, stream) -> PercWindow:
    """A window of the contracted model on the multiplicity environment."""
    return sample_window(contraction.Xi, p, (width, height), "contracted", stream, contraction.kappa)


__all__ = [
    "choose_kappa", "ContractionResult", "contract", "enhanced_probabilities", "enhance_window",
    "contracted_width", "contract_window", "contraction_law", "homomorphism_violations",
    "DualWindow", "dualize", "dual_for_box", "BlockingVerdict", "blocking_check",
    "semicircuit_probe", "origin_reaches", "sample_contracted",
]

"""Environments, percolation windows and crossing events.

Coordinates
-----------
A window covers the rectangle R([0, W) x [0, H)): vertices [0, W] x [0, H]
and the edges leaving every (x, y) with x < W, y < H.  ``h[y, x]`` is the
edge (x, y)-(x+1, y) and ``v[y, x]`` the edge (x, y)-(x, y+1).  Edge
probabilities depend on the column only.

Formulations
------------
``inhomogeneous``
    column-index lattice: verticals p, horizontals between columns i and
    i+1 open with p ** gaps[i].
``dilute``
    physical integer lattice: every horizontal p, verticals p on columns of
    the environment and 0 elsewhere.
``stretched_lengths``
    column-index lattice built from a dilute sample: a stretched edge is
    open iff all its unit edges are.
``contracted``
    the contracted model: horizontals p**kappa, vertical at column c open
    with 1 - (1 - p**kappa) ** gaps[c].
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .multiscale import ScaleSystem, label_blocks
from .renewal import DelaySpec, Dirac, InterarrivalSpec, Stationary  # noqa: F401
from .rng import as_generator, as_stream
from .stats import wilson_interval

FORMULATIONS = ("inhomogeneous", "dilute", "stretched_lengths", "contracted")

# stretched windows are built from a dilute sample up to this many unit cells
STRETCH_ADAPTER_CELLS = 50_000_000


# --------------------------------------------------------------------------
# environments
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvironmentWindow:
    """Columns ``origin + partial sums of gaps``; ``columns[0] == origin``."""

    gaps: np.ndarray
    origin: float = 0

    def __post_init__(self):
        g = np.asarray(self.gaps)
        if g.ndim != 1 or np.any(g <= 0):
            raise ValueError("gaps must be a 1-D array of positive values")

    @classmethod
    def from_gaps(cls, gaps, origin=0) -> "EnvironmentWindow":
        g = np.asarray(gaps)
        if np.all(g == np.round(g)):
            g = g.astype(np.int64)
        else:
            g = g.astype(float)
        return cls(g, origin)

    @property
    def integer(self) -> bool:
        return np.issubdtype(np.asarray(self.gaps).dtype, np.integer) and float(self.origin).is_integer()

    @property
    def columns(self) -> np.ndarray:
        c = np.concatenate([[0], np.cumsum(self.gaps)])
        return c + (int(self.origin) if self.integer else self.origin)

    @property
    def ncolumns(self) -> int:
        return len(self.gaps)

    @property
    def horizon(self):
        return self.columns[-1]

    def lambda_mask(self, width: int) -> np.ndarray:
        """mask[x] is True iff x in Lambda, for integer 0 <= x < width."""
        if not self.integer:
            raise ValueError("lambda mask needs an integer environment")
        if width - 1 > self.horizon:
            raise ValueError(f"environment known up to {self.horizon}, width {width} requested")
        mask = np.zeros(width, dtype=bool)
        cols = self.columns
        mask[cols[cols < width]] = True
        return mask

    def with_point(self, x: int) -> "EnvironmentWindow":
        """Environment with one extra integer point inserted."""
        cols = self.columns
        if x in set(cols.tolist()):
            return self
        new = np.sort(np.concatenate([cols, [x]]))
        return EnvironmentWindow(np.diff(new).astype(np.int64), int(new[0]))


def realize_environment(spec: InterarrivalSpec, delay: DelaySpec | None = None,
                        ncolumns: int | None = None, stream=None,
                        horizon: float | None = None) -> EnvironmentWindow:
    """Sample ``ncolumns`` gaps, or enough gaps for the last column to reach ``horizon``."""
    rng = as_generator(stream)
    delay = delay or Dirac(0)
    if ncolumns is None and horizon is None:
        raise ValueError("give ncolumns or horizon")
    if ncolumns is not None and ncolumns < 1:
        raise ValueError("ncolumns must be at least 1")
    origin = int(delay.sample(spec, 1, rng)[0]) if spec.integer_valued else 0
    if not spec.integer_valued and not isinstance(delay, Dirac):
        raise ValueError("non-integer environments take a Dirac(0) delay")
    if ncolumns is not None:
        return EnvironmentWindow.from_gaps(spec.sample(ncolumns, rng), origin)
    parts, reach = [], origin
    while reach < horizon or not parts:
        need = max(16, int((horizon - reach) / max(min(spec.mean(), 1e9), 1e-9)) + 16)
        chunk = spec.sample(need, rng)
        parts.append(chunk)
        reach = origin + sum(float(np.sum(p)) for p in parts)
    gaps = np.concatenate(parts)
    cols = origin + np.cumsum(gaps)
    cut = int(np.searchsorted(cols, horizon, side="left")) + 1
    return EnvironmentWindow.from_gaps(gaps[:cut], origin)


# --------------------------------------------------------------------------
# edge probabilities and windows
# --------------------------------------------------------------------------

def edge_prob_arrays(env: EnvironmentWindow, p: float, formulation: str, width: int,
                     kappa: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-column open probabilities ``(horizontal, vertical)`` for x < width."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if formulation in ("inhomogeneous", "stretched_lengths"):
        if width > env.ncolumns:
            raise ValueError(f"window needs {width} gaps, environment has {env.ncolumns}")
        g = np.asarray(env.gaps[:width], dtype=float)
        return np.power(p, g), np.full(width, float(p))
    if formulation == "dilute":
        return np.full(width, float(p)), np.where(env.lambda_mask(width), float(p), 0.0)
    if formulation == "contracted":
        if kappa is None:
            raise ValueError("contracted formulation needs kappa")
        if width > env.ncolumns:
            raise ValueError(f"window needs {width} multiplicities, environment has {env.ncolumns}")
        pk = p**kappa
        z = np.asarray(env.gaps[:width], dtype=float)
        return np.full(width, pk), 1.0 - np.power(1.0 - pk, z)
    raise ValueError(f"unknown formulation {formulation!r}")


def edge_prob(edge, env: EnvironmentWindow, p: float, formulation: str, kappa=None) -> float:
    """Open probability of ``edge = (x, y, 'h' | 'v')``."""
    x, y, kind = edge
    if x < 0 or y < 0:
        raise ValueError("edge outside the quadrant")
    try:
        ph, pv = edge_prob_arrays(env, p, formulation, int(x) + 1, kappa)
    except ValueError as exc:
        raise ValueError(f"edge {edge} outside the environment window: {exc}") from exc
    if kind == "h":
        return float(ph[x])
    if kind == "v":
        return float(pv[x])
    raise ValueError(f"edge kind must be 'h' or 'v', got {kind!r}")


@dataclass(frozen=True)
class Rectangle:
    """R([a, b) x [c, d)): vertices [a, b] x [c, d], no edges on the right/top sides."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if not (self.a < self.b and self.c < self.d):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def n_edges(self) -> int:
        return 2 * (self.b - self.a) * (self.d - self.c)

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.a and self.b <= width and 0 <= self.c and self.d <= height


def _draw_uniforms(rng, width: int, height: int):
    u = rng.random(2 * width * height)
    return u[0::2].reshape(height, width), u[1::2].reshape(height, width)


@dataclass(frozen=True, eq=False)
class PercWindow:
    env: EnvironmentWindow
    width: int
    height: int
    p: float
    formulation: str
    uh: np.ndarray
    uv: np.ndarray
    ph: np.ndarray
    pv: np.ndarray
    h: np.ndarray
    v: np.ndarray
    stream: str = ""
    kappa: float | None = None
    notes: tuple[str, ...] = ()

    @property
    def region(self) -> Rectangle:
        return Rectangle(0, self.width, 0, self.height)

    def rethreshold(self, p: float) -> "PercWindow":
        """Same uniforms, new parameter: configurations are coupled monotonically in p."""
        ph, pv = edge_prob_arrays(self.env, p, self.formulation, self.width, self.kappa)
        return replace(self, p=float(p), ph=ph, pv=pv,
                       h=self.uh < ph[None, :], v=self.uv < pv[None, :])

    @classmethod
    def from_arrays(cls, h, v, p=float("nan"), formulation="explicit", env=None):
        h = np.asarray(h, dtype=bool)
        v = np.asarray(v, dtype=bool)
        H, W = h.shape
        env = env or EnvironmentWindow(np.ones(W, dtype=np.int64))
        zeros = np.zeros((H, W))
        return cls(env, W, H, p, formulation, zeros, zeros, np.full(W, np.nan), np.full(W, np.nan), h, v)

    def open_edge_count(self) -> int:
        return int(self.h.sum() + self.v.sum())


def _stretched_uniforms(env: EnvironmentWindow, width: int, height: int, rng):
    """Per-edge uniforms of a stretched window derived from unit dilute edges.

    The horizontal stretched edge from column i covers gaps[i] unit edges; it
    gets u = max(unit uniforms) ** gaps[i], so u < p ** gaps[i] exactly when
    every unit edge is open at p.
    """
    cols = env.columns[: width + 1] - env.columns[0]
    span = int(cols[-1])
    uh_d, uv_d = _draw_uniforms(rng, span, height)
    starts = cols[:-1].astype(np.int64)
    mx = np.maximum.reduceat(uh_d, starts, axis=1)
    gaps = np.asarray(env.gaps[:width], dtype=float)
    return mx ** gaps[None, :], uv_d[:, starts]


def sample_window(env: EnvironmentWindow, p: float, region, formulation: str, stream,
                  kappa: float | None = None) -> PercWindow:
    """Sample per-edge uniforms once and threshold them at ``p``.

    ``region`` is ``(width, height)`` or a Rectangle anchored at the origin.
    """
    if isinstance(region, Rectangle):
        if region.a != 0 or region.c != 0:
            raise ValueError("window regions are anchored at the origin")
        width, height = region.b, region.d
    else:
        width, height = map(int, region)
    if width < 1 or height < 1:
        raise ValueError("window must have positive width and height")
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    rng = as_generator(stream)
    notes = ()
    if formulation == "stretched_lengths":
        if width > env.ncolumns:
            raise ValueError(f"window needs {width} gaps, environment has {env.ncolumns}")
        span = float(env.columns[width] - env.columns[0])
        if env.integer and span * height <= STRETCH_ADAPTER_CELLS:
            uh, uv = _stretched_uniforms(env, width, height, rng)
        else:
            # same law, sampled directly (non-integer gaps or oversized span)
            uh, uv = _draw_uniforms(rng, width, height)
            notes = ("stretched edges sampled directly",)
    else:
        uh, uv = _draw_uniforms(rng, width, height)
    ph, pv = edge_prob_arrays(env, p, formulation, width, kappa)
    return PercWindow(env, width, height, float(p), formulation, uh, uv, ph, pv,
                      uh < ph[None, :], uv < pv[None, :], str(stream) if stream is not None else "",
                      kappa, notes)


def sample_open_batch(ph: np.ndarray, pv: np.ndarray, height: int, n: int, rng):
    """``n`` independent configurations as uint8 arrays of shape (n, H, W)."""
    W = len(ph)
    u = rng.random((n, height, 2 * W))
    return ((u[:, :, 0::2] < ph).astype(np.uint8), (u[:, :, 1::2] < pv).astype(np.uint8))


# --------------------------------------------------------------------------
# connectivity and crossings
# --------------------------------------------------------------------------

def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def component_labels(window: PercWindow) -> np.ndarray:
    """Component label of every vertex, shape (H+1, W+1)."""
    W, H = window.width, window.height
    return K.component_labels(_u8(window.h), _u8(window.v), 0, W, 0, H,
                              0, W - 1, 0, H - 1, 0, W - 1, 0, H - 1)


def connected(window: PercWindow, set_a, set_b) -> bool:
    """Is some vertex of ``set_a`` joined to some vertex of ``set_b`` by open edges?"""
    A, B = list(set_a), list(set_b)
    if not A or not B:
        raise ValueError("vertex sets must be non-empty")
    for x, y in A + B:
        if not (0 <= x <= window.width and 0 <= y <= window.height):
            raise ValueError(f"vertex {(x, y)} outside the window")
    lab = component_labels(window)
    la = {int(lab[y, x]) for x, y in A}
    return any(int(lab[y, x]) in la for x, y in B)


@dataclass(frozen=True)
class CrossingReport:
    event: str
    indicator: bool
    witness: list | None = None
    k: int | None = None
    i: int | None = None
    j: int | None = None

    def to_json(self) -> str:
        return json.dumps({"event": self.event, "k": self.k, "i": self.i, "j": self.j,
                           "indicator": int(self.indicator)})


def _witness_path(h, v, R: Rectangle, direction: str):
    """Breadth-first open path realising the crossing, as a vertex list."""
    if direction == "h":
        starts = [(R.a, y) for y in range(R.c, R.d + 1)]
        done = lambda x, y: x == R.b  # noqa: E731
    else:
        starts = [(x, R.c) for x in range(R.a, R.b + 1)]
        done = lambda x, y: y == R.d  # noqa: E731
    prev = {s: None for s in starts}
    queue = deque(starts)
    while queue:
        x, y = queue.popleft()
        if done(x, y):
            path = [(x, y)]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])
            return path[::-1]
        nbrs = []
        if x < R.b and y < R.d and h[y, x]:
            nbrs.append((x + 1, y))
        if x > R.a and y < R.d and h[y, x - 1]:
            nbrs.append((x - 1, y))
        if y < R.d and x < R.b and v[y, x]:
            nbrs.append((x, y + 1))
        if y > R.c and x < R.b and v[y - 1, x]:
            nbrs.append((x, y - 1))
        for nb in nbrs:
            if nb not in prev:
                prev[nb] = (x, y)
                queue.append(nb)
    return None


def rect_crossing(h, v, R: Rectangle, direction: str) -> bool:
    return bool(K.rect_crossing(_u8(h), _u8(v), R.a, R.b, R.c, R.d, 0 if direction == "h" else 1))


def crossing(window: PercWindow, R: Rectangle, direction: str, witness: bool = False,
             event: str | None = None) -> CrossingReport:
    """Horizontal (``'h'``) or vertical (``'v'``) crossing of R inside its own edge set."""
    if direction not in ("h", "v"):
        raise ValueError("direction must be 'h' or 'v'")
    if not R.inside(window.width, window.height):
        raise ValueError(f"{R} does not fit in the {window.width}x{window.height} window")
    ind = rect_crossing(window.h, window.v, R, direction)
    path = _witness_path(window.h, window.v, R, direction) if (witness and ind) else None
    return CrossingReport(event or f"C_{direction}", ind, path)


def check_witness(window: PercWindow, R: Rectangle, direction: str, path) -> bool:
    """Is ``path`` an open path inside R joining the relevant opposite sides?"""
    if not path:
        return False
    for (x1, y1), (x2, y2) in zip(path, path[1:]):
        if abs(x1 - x2) + abs(y1 - y2) != 1:
            return False
        x, y = min(x1, x2), min(y1, y2)
        if not (R.a <= x < R.b and R.c <= y < R.d):
            return False
        if (window.h if y1 == y2 else window.v)[y, x] == 0:
            return False
    (x0, y0), (xn, yn) = path[0], path[-1]
    if direction == "h":
        return x0 == R.a and xn == R.b
    return y0 == R.c and yn == R.d


# --------------------------------------------------------------------------
# C / D events
# --------------------------------------------------------------------------

def c_rectangle(system: ScaleSystem, k: int, i: int, j: int) -> Rectangle:
    L, H = system.L[k], system.height(k)
    return Rectangle(i * L, (i + 2) * L, j * H, (j + 1) * H)


def d_rectangle(system: ScaleSystem, k: int, i: int, j: int) -> Rectangle:
    L, H = system.L[k], system.height(k)
    return Rectangle(i * L, (i + 1) * L, j * H, (j + 2) * H)


def cd_event(window: PercWindow, system: ScaleSystem, k: int, i: int, j: int) -> tuple[bool, bool]:
    """(C^k_{i,j}, D^k_{i,j}) on a dilute window."""
    rc, rd = c_rectangle(system, k, i, j), d_rectangle(system, k, i, j)
    for R in (rc, rd):
        if not R.inside(window.width, window.height):
            raise ValueError(f"window {window.width}x{window.height} too small for {R}")
    return rect_crossing(window.h, window.v, rc, "h"), rect_crossing(window.h, window.v, rd, "v")


@dataclass
class QkEstimate:
    """Worst observed failure probabilities of C^k_{0,0} and D^k_{0,0}.

    The maximum runs over sampled good environments only, so it is a lower
    bound on the maximum over all good environments.
    """

    k: int
    p: float
    n_envs: int
    n_configs: int
    worst_C_fail: float
    worst_C_ci: tuple[float, float]
    worst_D_fail: float
    worst_D_ci: tuple[float, float]
    table: list = field(default_factory=list)
    rejections: int = 0
    lower_bound_note: str = "max over sampled environments: a lower bound on the max over all good environments"

    @property
    def q_hat(self) -> float:
        return max(self.worst_C_fail, self.worst_D_fail)


def sample_good_environment(spec, system: ScaleSystem, k: int, stream, max_rejections: int = 10**6,
                            nblocks: int = 2):
    """Rejection-sample a stationary environment whose first ``nblocks`` scale-k blocks are good."""
    s = as_stream(stream)
    width = nblocks * system.L[k]
    for attempt in range(max_rejections + 1):
        env = realize_environment(spec, Stationary(), stream=s.child(attempt), horizon=width)
        grid = label_blocks(env, system, k, extent=width)
        if grid.good[k][:nblocks].all():
            return env, attempt
    raise RuntimeError(f"rejection cap {max_rejections} reached while conditioning on good blocks")


def estimate_qk(spec, system: ScaleSystem, p: float, k: int, n_envs: int, n_configs: int, stream,
                max_rejections: int = 10**6) -> QkEstimate:
    """Failure probabilities of C^k_{0,0} and D^k_{0,0} on good environments (dilute lattice)."""
    s = as_stream(stream)
    L, H = system.L[k], system.height(k)
    rc, rd = c_rectangle(system, k, 0, 0), d_rectangle(system, k, 0, 0)
    W, Hw = 2 * L, 2 * H
    table = []
    rejections = 0
    for e in range(n_envs):
        env, rej = sample_good_environment(spec, system, k, s.child(e, 0), max_rejections)
        rejections += rej
        ph, pv = edge_prob_arrays(env, p, "dilute", W)
        h3, v3 = sample_open_batch(ph, pv, Hw, n_configs, s.child(e, 1).generator())
        c = K.rect_crossing_batch(h3, v3, rc.a, rc.b, rc.c, rc.d, 0)
        d = K.rect_crossing_batch(h3, v3, rd.a, rd.b, rd.c, rd.d, 1)
        cf, df = 1.0 - c.mean(), 1.0 - d.mean()
        table.append({"env": e, "points": env.columns[env.columns < W].tolist(),
                      "C_fail": cf, "D_fail": df,
                      "C_ci": wilson_interval(int((~c).sum()), n_configs),
                      "D_ci": wilson_interval(int((~d).sum()), n_configs)})
    wc = max(table, key=lambda r: r["C_fail"])
    wd = max(table, key=lambda r: r["D_fail"])
    return QkEstimate(k, p, n_envs, n_configs, wc["C_fail"], wc["C_ci"], wd["D_fail"], wd["D_ci"],
                      table, rejections)


# --------------------------------------------------------------------------
# band construction, renormalised sites, ladder certificate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BandWitness:
    j0: int
    j1: int
    star: tuple[tuple[int, int], tuple[int, int]]
    C: dict
    D: dict
    B: tuple[bool, bool]
    G: bool
    applicable: bool

    @property
    def all_witnesses(self) -> bool:
        return all(self.C.values()) and all(self.D.values()) and all(self.B)

    @property
    def violation(self) -> bool:
        return self.applicable and self.all_witnesses and not self.G


def star_interval(j: int, L: int, total: int) -> tuple[int, int]:
    """Physical extent of blocks j-1 .. j+2, clipped to [0, total)."""
    return max(0, (j - 1) * L), min(total, (j + 3) * L)


def band_witness(window: PercWindow, system: ScaleSystem, k: int, labels) -> BandWitness:
    """Evaluate the band construction inside R([0, 2 L_{k+1}) x [0, 2 H_k)).

    The inclusion "all witnesses => G" is claimed only when both scale-(k+1)
    parent blocks are good; ``applicable`` records that.
    """
    if labels is None or len(labels.good) <= k + 1:
        raise ValueError(f"labels up to scale {k + 1} are required")
    m = system.branching(k)
    L, H = system.L[k], system.height(k)
    total = 2 * m * L
    if window.width < total or window.height < 2 * H:
        raise ValueError("window does not cover R([0, 2L_{k+1}) x [0, 2H_k))")
    good = labels.good[k]
    if len(good) < 2 * m or len(labels.good[k + 1]) < 2:
        raise ValueError("labels do not cover two scale-(k+1) blocks")
    bad0 = np.flatnonzero(~good[:m])
    bad1 = np.flatnonzero(~good[m:2 * m]) + m
    j0 = int(bad0[0]) if bad0.size else 0
    j1 = int(bad1[0]) if bad1.size else m
    stars = (star_interval(j0, L, total), star_interval(j1, L, total))
    B = tuple(bool(window.h[0, lo:hi].all()) for lo, hi in stars)
    C = {i: rect_crossing(window.h, window.v, c_rectangle(system, k, i, 0), "h")
         for i in range(2 * m - 1) if good[i] and good[i + 1]}
    D = {j: rect_crossing(window.h, window.v, d_rectangle(system, k, j, 0), "v")
         for j in range(2 * m) if good[j]}
    G = rect_crossing(window.h, window.v, Rectangle(0, total, 0, 2 * H), "h")
    applicable = bool(labels.good[k + 1][:2].all())
    return BandWitness(j0, j1, stars, C, D, B, G, applicable)


def dependency_rectangle(system: ScaleSystem, k: int, i: int, j: int) -> Rectangle:
    """Edges leaving this box determine the renormalised site (i, j)."""
    L, H = system.L[k], system.height(k)
    return Rectangle(i * L, (i + 2) * L, j * H, (j + 2) * H)


def renormalized_sites(window: PercWindow, system: ScaleSystem, k: int, ni: int, nj: int) -> np.ndarray:
    """Site (i, j) open iff C^k_{i,j} and D^k_{i,j}; returns shape (nj, ni)."""
    L, H = system.L[k], system.height(k)
    if window.width < (ni + 1) * L or window.height < (nj + 1) * H:
        raise ValueError("requested cells exceed the window")
    out = np.zeros((nj, ni), dtype=bool)
    for j in range(nj):
        for i in range(ni):
            c, d = cd_event(window, system, k, i, j)
            out[j, i] = c and d
    return out


def ladder_extent(system: ScaleSystem, K_: int) -> tuple[int, int]:
    """Window (width, height) needed by the ladder up to scale K."""
    return system.branching(K_) * system.L[K_], 2 * system.height(K_)


def ladder_certificate(window: PercWindow, system: ScaleSystem, k0: int, K_: int) -> tuple[bool, bool]:
    """(certificate, connectivity) for the ladder of scales k0..K.

    certificate: every C^k_{i,0} and D^k_{i,0}, k0 <= k <= K, 0 <= i <= m_k - 2.
    connectivity: [0, L_k0] x {0} joined to the top row y = 2 H_K inside the
    ladder window R([0, L_{K+1}) x [0, 2 H_K)).
    """
    if not 0 <= k0 <= K_:
        raise ValueError("need 0 <= k0 <= K")
    W, H = ladder_extent(system, K_)
    if window.width < W or window.height < H:
        raise ValueError(f"window {window.width}x{window.height} smaller than ladder {W}x{H}")
    cert = True
    for k in range(k0, K_ + 1):
        for i in range(system.branching(k) - 1):
            c, d = cd_event(window, system, k, i, 0)
            if not (c and d):
                cert = False
                break
        if not cert:
            break
    lab = K.component_labels(_u8(window.h), _u8(window.v), 0, W, 0, H,
                             0, W - 1, 0, H - 1, 0, W - 1, 0, H - 1)
    bottom = set(lab[0, : system.L[k0] + 1].tolist())
    conn = bool(bottom & set(lab[H, :].tolist()))
    return cert, conn


# --------------------------------------------------------------------------
# textual window format
# --------------------------------------------------------------------------

def _rle(bits: np.ndarray) -> str:
    """Run lengths, starting with a (possibly empty) closed run."""
    out, cur, run = [], 0, 0
    for b in bits.astype(np.uint8):
        if b == cur:
            run += 1
        else:
            out.append(run)
            cur, run = b, 1
    out.append(run)
    return " ".join(map(str, out))


def _unrle(text: str, n: int) -> np.ndarray:
    bits, cur = [], 0
    for tok in text.split():
        bits.extend([cur] * int(tok))
        cur ^= 1
    if len(bits) != n:
        raise ValueError("run lengths do not match the row width")
    return np.array(bits, dtype=bool)


def dump_window(window: PercWindow, extra_sections: dict | None = None) -> str:
    lines = [
        f"# window width={window.width} height={window.height} p={window.p!r} "
        f"formulation={window.formulation} seed={window.stream or '-'}",
        "gaps " + " ".join(str(g) for g in np.asarray(window.env.gaps[: window.width + 1]).tolist()),
        f"origin {window.env.origin}",
    ]
    for y in range(window.height):
        lines.append(f"h {y} " + _rle(window.h[y]))
    for y in range(window.height):
        lines.append(f"v {y} " + _rle(window.v[y]))
    for name, body in (extra_sections or {}).items():
        lines.append(f"[{name}]")
        lines.extend(body)
    return "\n".join(lines) + "\n"


def load_window(text: str) -> tuple[dict, np.ndarray, np.ndarray]:
    """Parse :func:`dump_window` output into (header, h, v)."""
    rows = text.splitlines()
    header = dict(tok.split("=", 1) for tok in rows[0][len("# window "):].split())
    W, H = int(header["width"]), int(header["height"])
    h = np.zeros((H, W), dtype=bool)
    v = np.zeros((H, W), dtype=bool)
    for line in rows[1:]:
        if line.startswith("h "):
            _, y, rest = line.split(" ", 2)
            h[int(y)] = _unrle(rest, W)
        elif line.startswith("v "):
            _, y, rest = line.split(" ", 2)
            v[int(y)] = _unrle(rest, W)
    return header, h, v


__all__ = [
    "FORMULATIONS", "EnvironmentWindow", "realize_environment", "edge_prob", "edge_prob_arrays",
    "Rectangle", "PercWindow", "sample_window", "sample_open_batch", "connected",
    "component_labels", "CrossingReport", "crossing", "check_witness", "rect_crossing",
    "c_rectangle", "d_rectangle", "cd_event", "QkEstimate", "estimate_qk",
    "sample_good_environment", "BandWitness", "band_witness", "star_interval",
    "dependency_rectangle", "renormalized_sites", "ladder_extent", "ladder_certificate",
    "dump_window", "load_window",
]

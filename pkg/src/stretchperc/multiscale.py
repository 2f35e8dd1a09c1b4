"""Scale ladders, block partitions and good/bad block labels.

Scales grow as ``L_k = L_{k-1} * floor(L_{k-1}^(gamma-1))``.  All ladder
arithmetic is exact: gamma is held as a Fraction and integer powers are
compared with Python big integers, so ``floor(L^(gamma-1))`` never suffers
from floating point rounding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .renewal import InterarrivalSpec, Stationary, DelaySpec
from .rng import as_stream
from .stats import wilson_interval


class ParamError(ValueError):
    """Raised with every violated parameter constraint listed."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


@dataclass(frozen=True)
class ScaleParams:
    """Exponents of the multiscale scheme.

    ``waived`` records that the constraints were not all met and the caller
    chose to proceed anyway.
    """

    eps: Fraction
    alpha: Fraction
    gamma: Fraction
    mu: Fraction
    beta: Fraction
    waived: tuple[str, ...] = ()

    @property
    def c2(self) -> Fraction:
        return 2 + 2 * self.alpha - self.gamma * self.alpha - 2 * self.gamma

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("eps", "alpha", "gamma", "mu", "beta", "c2")}


def param_violations(eps, alpha, gamma, mu, beta) -> list[str]:
    eps, alpha, gamma, mu, beta = map(_frac, (eps, alpha, gamma, mu, beta))
    out = []
    if not eps > 0:
        out.append(f"eps={eps} must be positive")
    if not 0 < alpha <= eps / 2:
        out.append(f"alpha={float(alpha)} outside (0, eps/2] = (0, {float(eps / 2)}]")
    gmax = 1 + alpha / (alpha + 2) if alpha > -2 else Fraction(1)
    if not 1 < gamma < gmax:
        out.append(f"gamma={float(gamma)} outside (1, 1 + alpha/(alpha+2)) = (1, {float(gmax)})")
    if gamma > 0 and not 1 / gamma < mu < 1:
        out.append(f"mu={float(mu)} outside (1/gamma, 1) = ({float(1 / gamma)}, 1)")
    blo = gamma * mu - gamma + 1
    if not blo < 1:
        out.append(f"beta interval empty: gamma*mu - gamma + 1 = {float(blo)} >= 1")
    elif not blo < beta < 1:
        out.append(f"beta={float(beta)} outside (gamma*mu - gamma + 1, 1) = ({float(blo)}, 1)")
    c2 = 2 + 2 * alpha - gamma * alpha - 2 * gamma
    if not c2 > 0:
        out.append(f"c2 = 2 + 2 alpha - gamma alpha - 2 gamma = {float(c2)} must be positive")
    return out


def validate_params(eps, alpha, gamma, mu, beta, waive: bool = False) -> ScaleParams:
    """Check every interval constraint; raise :class:`ParamError` listing all failures.

    With ``waive=True`` the violations are recorded on the result instead.
    """
    bad = param_violations(eps, alpha, gamma, mu, beta)
    if bad and not waive:
        raise ParamError(bad)
    return ScaleParams(*map(_frac, (eps, alpha, gamma, mu, beta)), waived=tuple(bad))


def feasible_gamma_range(eps, alpha=None) -> tuple[Fraction, Fraction]:
    """Open interval of admissible gamma; alpha defaults to its maximum eps/2."""
    alpha = _frac(eps) / 2 if alpha is None else _frac(alpha)
    return Fraction(1), 1 + alpha / (alpha + 2)


# --------------------------------------------------------------------------
# exact integer powers
# --------------------------------------------------------------------------

def _iroot(n: int, q: int) -> int:
    """floor(n ** (1/q)) for integers n >= 0, q >= 1, by integer Newton steps."""
    if n < 2 or q == 1:
        return n
    x = 1 << -(-n.bit_length() // q)  # an upper bound
    while True:
        y = ((q - 1) * x + n // x ** (q - 1)) // q
        if y >= x:
            return x
        x = y


def floor_power(L: int, exponent: Fraction) -> int:
    """floor(L ** exponent) for a positive rational exponent, exactly."""
    P, Q = exponent.numerator, exponent.denominator
    if P < 0:
        raise ValueError("negative exponent")
    m = _iroot(int(L) ** P, Q)
    return max(m, 1) if L >= 1 else m


def power_at_least(L: int, exponent: Fraction, bound: int) -> bool:
    """L ** exponent >= bound, exactly (bound a positive integer)."""
    P, Q = exponent.numerator, exponent.denominator
    return L**P >= bound**Q


def build_scales(L0: int, gamma, kmax: int, check_sandwich: bool = True) -> list[int]:
    """Scale ladder L_0..L_kmax as Python integers."""
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    gamma = _frac(gamma)
    L0 = int(L0)
    if not power_at_least(L0, gamma - 1, 3):
        raise ValueError(f"L0^(gamma-1) = {L0 ** float(gamma - 1):.4f} < 3")
    L = [L0]
    for _ in range(kmax):
        L.append(L[-1] * floor_power(L[-1], gamma - 1))
    if check_sandwich:
        for k, Lk in enumerate(L):
            ok = sandwich_holds(L0, gamma, k, Lk)
            if not ok:
                raise AssertionError(f"scale sandwich violated at k={k}")
    return L


def sandwich_holds(L0: int, gamma: Fraction, k: int, Lk: int) -> bool:
    """(2/3)^k L0^(gamma^k) <= L_k <= L0^(gamma^k)."""
    P, Q = gamma.numerator**k, gamma.denominator**k
    if P.bit_length() * L0.bit_length() < 4_000_000 and Q * Lk.bit_length() < 4_000_000:
        upper = Lk**Q <= L0**P
        lower = (2**k) ** Q * L0**P <= (3**k * Lk) ** Q
        return upper and lower
    # log-space fallback for very deep ladders
    lg = math.log(Lk)
    top = float(gamma) ** k * math.log(L0)
    return k * math.log(2 / 3) + top - 1e-9 * top <= lg <= top * (1 + 1e-12)


# --------------------------------------------------------------------------
# scale systems
# --------------------------------------------------------------------------

@dataclass
class ScaleSystem:
    """Validated exponents plus the scale and height ladders.

    ``height_mode`` is ``"desk"`` (H_k = h L_k, the simulation schedule) or
    ``"exact_log"`` (H_0 = 100, H_k = 2 ceil(exp(L_k^mu)) H_{k-1}, kept as
    natural logarithms because it overflows immediately).
    """

    gamma: Fraction
    L: list[int]
    params: ScaleParams | None = None
    height_mode: str = "desk"
    h: int = 4
    mu: Fraction | None = None
    log_H: list[float] = field(default_factory=list)

    @classmethod
    def build(cls, L0, gamma, kmax, params=None, height_mode="desk", h=4, mu=None):
        gamma = _frac(gamma)
        if params is not None and _frac(params.gamma) != gamma:
            raise ValueError("gamma disagrees with params")
        L = build_scales(L0, gamma, kmax)
        mu = _frac(mu) if mu is not None else (params.mu if params is not None else None)
        sys = cls(gamma, L, params, height_mode, int(h), mu)
        if height_mode == "exact_log":
            if mu is None:
                raise ValueError("exact_log height schedule needs mu")
            sys.log_H = exact_log_heights(L, float(mu))
        elif height_mode != "desk":
            raise ValueError(f"unknown height mode {height_mode!r}")
        return sys

    @property
    def kmax(self) -> int:
        return len(self.L) - 1

    @property
    def L0(self) -> int:
        return self.L[0]

    def branching(self, k: int) -> int:
        """floor(L_k^(gamma-1)): number of scale-k blocks per scale-(k+1) block."""
        return floor_power(self.L[k], self.gamma - 1)

    def height(self, k: int) -> int:
        if self.height_mode != "desk":
            raise ValueError("exact heights are not simulable; use a desk schedule")
        return self.h * self.L[k]

    def log10_height(self, k: int) -> float:
        if self.height_mode == "desk":
            return math.log10(self.height(k))
        return self.log_H[k] / math.log(10)

    def block(self, k: int, j: int) -> tuple[int, int]:
        """I^k_j = [j L_k, (j+1) L_k)."""
        return j * self.L[k], (j + 1) * self.L[k]

    def flag(self) -> str:
        return "desk" if self.height_mode == "desk" else "exact_log"


def exact_log_heights(L: list[int], mu: float) -> list[float]:
    out = [math.log(100.0)]
    for Lk in L[1:]:
        x = float(Lk) ** mu
        ce = math.log(math.ceil(math.exp(x))) if x < 700 else x
        out.append(out[-1] + math.log(2.0) + ce)
    return out


def block_indices(system: ScaleSystem, k: int, j: int) -> range:
    """l_{k,j}: the scale-(k-1) children of I^k_j."""
    if k < 1:
        raise ValueError("block_indices needs k >= 1")
    m = system.branching(k - 1)
    return range(j * m, (j + 1) * m)


# --------------------------------------------------------------------------
# L0 validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class L0Check:
    name: str
    holds: bool
    lhs: float
    rhs: float


@dataclass(frozen=True)
class L0Report:
    L0: int
    checks: tuple[L0Check, ...]
    minimal_L0: int | None

    @property
    def ok(self) -> bool:
        return all(c.holds for c in self.checks)

    def __str__(self):
        parts = [f"{c.name}: {'pass' if c.holds else 'FAIL'} ({c.lhs:.6g} vs {c.rhs:.6g})" for c in self.checks]
        return f"L0={self.L0}: " + "; ".join(parts) + f"; minimal L0={self.minimal_L0}"


def _l0_checks(params: ScaleParams, L0: int, rho_m: float, c1: float):
    g1 = params.gamma - 1
    eps, alpha, c2 = params.eps, params.alpha, params.c2
    i = L0Check("(i) L0^(gamma-1) >= 3", power_at_least(L0, g1, 3), L0 ** float(g1), 3.0)
    lhs2 = L0 ** float(eps - alpha)
    ii = L0Check("(ii) L0^(eps-alpha) >= E(rho^eps)", lhs2 >= rho_m, lhs2, rho_m)
    lhs3 = L0 ** float(c2)
    iii = L0Check("(iii) L0^c2 >= c1 + 1", lhs3 >= c1 + 1.0, lhs3, c1 + 1.0)
    return i, ii, iii


def validate_L0(params: ScaleParams, L0: int, rho_eps_moment, c1_upper) -> L0Report:
    """Check the three largeness conditions on L0 and find the least valid L0."""
    for name, val in (("E(rho^eps)", rho_eps_moment), ("c1 upper bound", c1_upper)):
        if val is None or not math.isfinite(float(val)):
            raise ValueError(f"{name} is missing or not finite")
    rho_m, c1 = float(rho_eps_moment), float(c1_upper)
    checks = _l0_checks(params, int(L0), rho_m, c1)
    return L0Report(int(L0), checks, minimal_L0(params, rho_m, c1))


def minimal_L0(params: ScaleParams, rho_m: float, c1: float) -> int | None:
    c2 = float(params.c2)
    if c2 <= 0 and c1 > 0:
        return None  # (iii) cannot hold for any L0
    cands = [3.0 ** (1.0 / float(params.gamma - 1))]
    if rho_m > 0:
        cands.append(rho_m ** (1.0 / float(params.eps - params.alpha)))
    if c2 > 0 and c1 > 0:
        cands.append((c1 + 1.0) ** (1.0 / c2))
    start = max(2, int(math.floor(max(cands))) - 2)
    if start > 10**15:
        return None
    L0 = start
    while not all(c.holds for c in _l0_checks(params, L0, rho_m, c1)):
        L0 += 1
    return L0


# --------------------------------------------------------------------------
# block labels
# --------------------------------------------------------------------------

@dataclass
class BlockLabelGrid:
    """good[k][j] is True iff I^k_j is good."""

    L: list[int]
    branch: list[int]
    good: list[np.ndarray]

    @property
    def kmax(self) -> int:
        return len(self.good) - 1

    def bad(self, k: int) -> np.ndarray:
        return ~self.good[k]

    def violations(self) -> list[str]:
        """Structural checks: tiling of blocks and the good-block child rule."""
        out = []
        for k in range(1, len(self.good)):
            m = self.branch[k - 1]
            if self.L[k] != m * self.L[k - 1]:
                out.append(f"scale {k}: L_k != m L_(k-1)")
            nk = len(self.good[k])
            for j in range(nk):
                lo, hi = j * m * self.L[k - 1], (j + 1) * m * self.L[k - 1]
                if (lo, hi) != (j * self.L[k], (j + 1) * self.L[k]):
                    out.append(f"block ({k},{j}) not tiled by its children")
                if self.good[k][j]:
                    bad = np.flatnonzero(~self.good[k - 1][j * m:(j + 1) * m])
                    if len(bad) > 2 or (len(bad) == 2 and bad[1] - bad[0] != 1):
                        out.append(f"good block ({k},{j}) has bad children {bad.tolist()}")
        return out

    def dump(self) -> str:
        """One line per scale with run-length encoded bad block intervals."""
        lines = []
        for k, g in enumerate(self.good):
            runs = _runs(~g)
            body = " ".join(f"[{a},{b})" for a, b in runs) or "-"
            lines.append(f"k={k} L={self.L[k]} n={len(g)} bad: {body}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, branch=None) -> "BlockLabelGrid":
        L, good = [], []
        for line in text.strip().splitlines():
            fields = dict(part.split("=") for part in line.split()[:3])
            g = np.ones(int(fields["n"]), dtype=bool)
            for tok in line.split("bad:")[1].split():
                if tok != "-":
                    a, b = tok.strip("[)").split(",")
                    g[int(a):int(b)] = False
            L.append(int(fields["L"]))
            good.append(g)
        if branch is None:
            branch = [L[k + 1] // L[k] for k in range(len(L) - 1)]
        return cls(L, list(branch), good)


def _runs(mask: np.ndarray):
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def coarsen(bad_children: np.ndarray, m: int) -> np.ndarray:
    """Bad labels one scale up: bad iff two bad children at index distance >= 2.

    ``bad_children`` may be 2-D (replicas x blocks).
    """
    arr = np.asarray(bad_children, dtype=bool)
    n = arr.shape[-1] // m
    blocks = arr[..., : n * m].reshape(arr.shape[:-1] + (n, m))
    anyb = blocks.any(axis=-1)
    first = np.argmax(blocks, axis=-1)
    last = m - 1 - np.argmax(blocks[..., ::-1], axis=-1)
    return anyb & (last - first >= 2)


def level0_good(points: np.ndarray, L0: int, nblocks: int) -> np.ndarray:
    pts = np.asarray(points)
    pts = pts[(pts >= 0) & (pts < nblocks * L0)]
    counts = np.bincount((pts // L0).astype(np.int64), minlength=nblocks)
    return counts > 0


def label_blocks(env, system: ScaleSystem, kmax: int | None = None,
                 extent: int | None = None) -> BlockLabelGrid:
    """Good/bad labels of every block inside the environment's horizon.

    A block is determined by the environment only if it ends at or before
    the last known column.  ``extent`` restricts labelling to [0, extent),
    which matters for heavy tails whose last column can be astronomically far.
    """
    kmax = system.kmax if kmax is None else kmax
    if kmax > system.kmax:
        raise ValueError("kmax exceeds the scale system")
    cols = np.asarray(env.columns)
    if not np.all(cols == np.floor(cols)):
        raise ValueError("block labels need an integer environment")
    known = int(cols[-1]) + 1
    if extent is not None:
        if extent > known:
            raise ValueError(f"environment known up to {known - 1}, extent {extent} requested")
        known = int(extent)
    branch = [system.branching(k) for k in range(kmax)]
    n0 = known // system.L[0]
    good = [level0_good(cols[cols < known].astype(np.int64), system.L[0], n0)]
    for k in range(1, kmax + 1):
        good.append(~coarsen(~good[-1], branch[k - 1]))
    if len(good[kmax]) < 1:
        raise ValueError(f"horizon {known} too short for a scale-{kmax} block (L={system.L[kmax]})")
    return BlockLabelGrid(system.L[: kmax + 1], branch, good)


# --------------------------------------------------------------------------
# p_k estimation
# --------------------------------------------------------------------------

def occupancy(spec: InterarrivalSpec, delay: DelaySpec, horizon: int, size: int, rng) -> np.ndarray:
    """Boolean (size, horizon) array: is x in Lambda, for x < horizon."""
    spec._require_integer("environment occupancy")
    occ = np.zeros((size, horizon), dtype=bool)
    cur = delay.sample(spec, size, rng).astype(np.int64)
    rows = np.arange(size)
    live = cur < horizon
    while live.any():
        occ[rows[live], cur[live]] = True
        idx = np.flatnonzero(live)
        cur[idx] += spec.sample(idx.size, rng)
        live = cur < horizon
    return occ


@dataclass(frozen=True)
class PkEstimate:
    k: int
    n: int
    bad: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    bound: float
    exact: float | None = None
    recursion_rhs: float | None = None
    recursion_ok: bool | None = None

    @property
    def resolved(self) -> bool:
        """False when no bad block was seen: only the upper CI is meaningful."""
        return self.bad > 0

    @property
    def bound_ok(self) -> bool:
        return self.ci_hi <= self.bound

    def describe(self) -> str:
        if not self.resolved:
            return (f"k={self.k}: indistinguishable from 0 at n={self.n} "
                    f"(upper CI {self.ci_hi:.3g}, bound {self.bound:.3g})")
        return f"k={self.k}: p_hat={self.p_hat:.4g} [{self.ci_lo:.3g}, {self.ci_hi:.3g}], bound {self.bound:.3g}"


def exact_p0(spec: InterarrivalSpec, L0: int) -> float | None:
    """P(I^0_0 contains no point) = P(rho >= L0) under the stationary delay."""
    from .renewal import Geometric, stationary_delay_pmf
    if isinstance(spec, Geometric):
        return (1.0 - spec.q) ** L0
    if not spec.integer_valued:
        return None
    if L0 == 0:
        return 1.0
    return stationary_delay_pmf(spec, L0 - 1).tail


def estimate_pk(spec: InterarrivalSpec, system: ScaleSystem, ks, nsamples: int, stream,
                c1_hat: float | None = None, chunk: int = 2000) -> list[PkEstimate]:
    """Monte Carlo p_k = P(I^k_0 is bad) under the stationary environment.

    ``ks`` is an int or a list; with consecutive scales and ``c1_hat`` the
    one-step recursion comparator is filled in.
    """
    ks = [ks] if isinstance(ks, int) else sorted(ks)
    kmax = max(ks)
    horizon = system.L[kmax]
    s = as_stream(stream)
    bad_counts = np.zeros(kmax + 1, dtype=np.int64)
    done = 0
    part = 0
    while done < nsamples:
        n = min(chunk, nsamples - done)
        rng = s.child(part).generator()
        occ = occupancy(spec, Stationary(), horizon, n, rng)
        good0 = occ.reshape(n, -1, system.L[0]).any(axis=2)
        bad = ~good0
        bad_counts[0] += bad[:, 0].sum()
        for k in range(1, kmax + 1):
            bad = coarsen(bad, system.branching(k - 1))
            bad_counts[k] += bad[:, 0].sum()
        done += n
        part += 1
    alpha = float(system.params.alpha) if system.params else 0.5
    eps = float(system.params.eps) if system.params else 1.0
    out = {}
    for k in range(kmax + 1):
        lo, hi = wilson_interval(int(bad_counts[k]), nsamples)
        out[k] = PkEstimate(k, nsamples, int(bad_counts[k]), bad_counts[k] / nsamples, lo, hi,
                            float(system.L[k]) ** -alpha,
                            exact_p0(spec, system.L[0]) if k == 0 else None)
    if c1_hat is not None:
        for k in range(kmax):
            Lk = float(system.L[k])
            rhs = Lk ** (2 * float(system.gamma - 1)) * (out[k].ci_hi ** 2 + c1_hat * Lk ** -eps)
            e = out[k + 1]
            out[k + 1] = PkEstimate(e.k, e.n, e.bad, e.p_hat, e.ci_lo, e.ci_hi, e.bound, e.exact,
                                    rhs, e.p_hat <= rhs)
    return [out[k] for k in ks]


def recursion_rhs(system: ScaleSystem, k: int, p_k: float, c1: float, eps: float) -> float:
    """L_k^(2(gamma-1)) (p_k^2 + c1 L_k^-eps)."""
    Lk = float(system.L[k])
    return Lk ** (2 * float(system.gamma - 1)) * (p_k**2 + c1 * Lk ** -eps)


def write_scale_report(path, system: ScaleSystem, estimates: list[PkEstimate] | None = None):
    est = {e.k: e for e in estimates or []}
    alpha = float(system.params.alpha) if system.params else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        hcol = "H_k" if system.height_mode == "desk" else "log10_H_k"
        w.writerow(["k", "L_k", hcol, "bound_L_k^-alpha", "p_hat", "ci_lo", "ci_hi", "height_mode"])
        for k, Lk in enumerate(system.L):
            hval = system.height(k) if system.height_mode == "desk" else f"{system.log10_height(k):.6g}"
            bound = f"{float(Lk) ** -alpha:.6g}" if alpha is not None else ""
            e = est.get(k)
            w.writerow([k, Lk, hval, bound,
                        "" if e is None else f"{e.p_hat:.6g}",
                        "" if e is None else f"{e.ci_lo:.6g}",
                        "" if e is None else f"{e.ci_hi:.6g}",
                        system.flag()])

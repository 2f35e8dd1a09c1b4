"""Discrete renewal processes.

Interarrival laws, delays, trajectory sampling (arrival times ``X``, renewal
indicators ``Y`` and forward recurrence times ``Z``), the stationary delay,
coupling times and empirical decoupling gaps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import mpmath
import numpy as np
from scipy import special

from .rng import as_generator, as_stream

# values at or above this are reported as "saturated" by the zeta sampler
SATURATION = 2**62

__all__ = [
    "InterarrivalSpec", "Deterministic", "Geometric", "Zeta", "FinitePmf", "Scaled",
    "DelaySpec", "Dirac", "Stationary", "ExplicitDelay",
    "RenewalTrajectory", "CouplingSample", "CylinderEvent", "DecouplingEstimate",
    "DecouplingReport", "MomentResult", "StationaryDelayPmf", "AperiodicReduction",
    "parse_spec", "parse_delay", "stationary_delay_pmf", "stationary_moment",
    "trajectory_from_interarrivals", "sample_renewal", "sample_forward_recurrence",
    "shift_stationarity_check", "coupling_time", "sample_coupling_times",
    "estimate_c1", "coupling_c1", "check_moment", "is_aperiodic", "reduce_to_aperiodic",
]


class SpecError(ValueError):
    pass


# --------------------------------------------------------------------------
# interarrival laws
# --------------------------------------------------------------------------

class InterarrivalSpec:
    """Law of the gaps between consecutive columns.

    Concrete kinds are :class:`Deterministic`, :class:`Geometric`,
    :class:`Zeta`, :class:`FinitePmf` and :class:`Scaled`.  Use
    :func:`parse_spec` for the compact string form (``geometric:0.5``).
    """

    kind: str = ""

    # -- constructors -----------------------------------------------------
    @staticmethod
    def deterministic(value) -> "Deterministic":
        return Deterministic(value)

    @staticmethod
    def geometric(q) -> "Geometric":
        return Geometric(q)

    @staticmethod
    def zeta(s) -> "Zeta":
        return Zeta(s)

    @staticmethod
    def finite_pmf(values, probs=None) -> "FinitePmf":
        return FinitePmf.from_table(values, probs)

    @staticmethod
    def uniform(values) -> "FinitePmf":
        return FinitePmf.from_table(values, None)

    @staticmethod
    def scaled(inner, factor) -> "Scaled":
        return Scaled(inner, factor)

    # -- interface --------------------------------------------------------
    @property
    def integer_valued(self) -> bool:
        raise NotImplementedError

    @property
    def finite_support(self) -> bool:
        raise NotImplementedError

    def support(self, upto=None) -> np.ndarray:
        """Support points, truncated at ``upto`` for infinite supports."""
        raise NotImplementedError

    def pmf(self, x) -> np.ndarray:
        raise NotImplementedError

    def sf(self, x) -> np.ndarray:
        """P(xi > x)."""
        raise NotImplementedError

    def tail_ge(self, x) -> float:
        """P(xi >= x)."""
        raise NotImplementedError

    def mean(self) -> float:
        res = check_moment(self, 1.0)
        return res.value if res.finite else math.inf

    def sample(self, size, rng) -> np.ndarray:
        raise NotImplementedError

    def size_biased(self, size, rng) -> np.ndarray:
        """Samples of the size-biased law i P(xi = i) / E(xi)."""
        raise NotImplementedError

    def _require_integer(self, what: str):
        if not self.integer_valued:
            raise SpecError(f"{what} requires integer interarrivals (got {self})")

    def to_keyvalue(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self._kv().items()) + "\n"

    def _kv(self) -> dict:
        return {"kind": self.kind, "spec": str(self)}

    def __eq__(self, other):
        return type(self) is type(other) and str(self) == str(other)

    def __hash__(self):
        return hash(str(self))

    def __repr__(self):
        return f"InterarrivalSpec({str(self)!r})"


class Deterministic(InterarrivalSpec):
    kind = "deterministic"

    def __init__(self, value):
        value = int(value)
        if value < 1:
            raise SpecError("deterministic interarrival must be a positive integer")
        self.value = value

    integer_valued = property(lambda self: True)
    finite_support = property(lambda self: True)

    def support(self, upto=None):
        return np.array([self.value])

    def pmf(self, x):
        return (np.asarray(x) == self.value).astype(float)

    def sf(self, x):
        return (np.asarray(x) < self.value).astype(float)

    def tail_ge(self, x):
        return float(self.value >= x)

    def sample(self, size, rng):
        return np.full(size, self.value, dtype=np.int64)

    def size_biased(self, size, rng):
        return self.sample(size, rng)

    def __str__(self):
        return f"det:{self.value}"


class Geometric(InterarrivalSpec):
    """Geometric law on {1, 2, ...} with success probability ``q``."""

    kind = "geometric"

    def __init__(self, q):
        q = float(q)
        if not 0.0 < q < 1.0:
            raise SpecError("geometric success probability must lie in (0, 1)")
        self.q = q

    integer_valued = property(lambda self: True)
    finite_support = property(lambda self: False)

    def support(self, upto=None):
        if upto is None:
            raise SpecError("infinite support: pass upto")
        return np.arange(1, int(upto) + 1)

    def pmf(self, x):
        x = np.asarray(x)
        out = self.q * (1.0 - self.q) ** (np.maximum(x, 1) - 1.0)
        return np.where((x >= 1) & (x == np.floor(x)), out, 0.0)

    def sf(self, x):
        x = np.floor(np.maximum(np.asarray(x, dtype=float), 0.0))
        return (1.0 - self.q) ** x

    def tail_ge(self, x):
        return float((1.0 - self.q) ** max(math.ceil(x) - 1, 0))

    def sample(self, size, rng):
        return rng.geometric(self.q, size=size).astype(np.int64)

    def size_biased(self, size, rng):
        # negative binomial: sum of two geometrics minus one
        return (rng.geometric(self.q, size=size) + rng.geometric(self.q, size=size) - 1).astype(np.int64)

    def __str__(self):
        return f"geometric:{self.q!r}"


class _ZetaTable:
    """Survival table S(k) = P(xi > k) for a zeta law, grown on demand."""

    MAX_TABLE = 2**22

    def __init__(self, s):
        self.s = s
        self.norm = float(special.zeta(s))
        self.sf = np.array([1.0])

    def survival(self, k):
        k = np.asarray(k, dtype=float)
        return special.zeta(self.s, k + 1.0) / self.norm

    def extend(self, size):
        size = min(size, self.MAX_TABLE)
        if size + 1 <= len(self.sf):
            return
        k = np.arange(len(self.sf), size + 1, dtype=float)
        self.sf = np.concatenate([self.sf, self.survival(k)])

    def invert(self, v):
        """Smallest k >= 1 with S(k) < v, for uniforms ``v``."""
        v = np.asarray(v, dtype=float)
        if len(self.sf) < 4097:
            self.extend(4096)
        while v.size and v.min() <= self.sf[-1] and len(self.sf) - 1 < self.MAX_TABLE:
            self.extend(4 * (len(self.sf) - 1))
        out = np.searchsorted(-self.sf, -v, side="right").astype(np.int64)
        far = out >= len(self.sf)
        if far.any():
            out[far] = self._bisect(v[far], len(self.sf) - 1)
        return out

    def _bisect(self, v, lo0):
        # S is decreasing; invariant S(lo) >= v > S(hi)
        lo = np.full(v.shape, float(lo0))
        hi = np.full(v.shape, float(SATURATION))
        for _ in range(200):
            mid = np.floor((lo + hi) / 2.0)
            active = hi - lo > 1.0
            if not active.any():
                break
            below = self.survival(mid) < v
            hi = np.where(active & below, mid, hi)
            lo = np.where(active & ~below, mid, lo)
        return np.minimum(hi, float(SATURATION)).astype(np.int64)


_ZETA_TABLES: dict[float, _ZetaTable] = {}


class Zeta(InterarrivalSpec):
    """Zeta law on {1, 2, ...}: P(xi = k) proportional to k^-s, s > 1."""

    kind = "zeta"

    def __init__(self, s):
        s = float(s)
        if not s > 1.0:
            raise SpecError("zeta exponent must exceed 1")
        self.s = s

    integer_valued = property(lambda self: True)
    finite_support = property(lambda self: False)

    @property
    def _table(self) -> _ZetaTable:
        tab = _ZETA_TABLES.get(self.s)
        if tab is None:
            tab = _ZETA_TABLES[self.s] = _ZetaTable(self.s)
        return tab

    def support(self, upto=None):
        if upto is None:
            raise SpecError("infinite support: pass upto")
        return np.arange(1, int(upto) + 1)

    def pmf(self, x):
        x = np.asarray(x, dtype=float)
        ok = (x >= 1) & (x == np.floor(x))
        return np.where(ok, np.maximum(x, 1.0) ** -self.s / self._table.norm, 0.0)

    def sf(self, x):
        x = np.floor(np.maximum(np.asarray(x, dtype=float), 0.0))
        return self._table.survival(x)

    def tail_ge(self, x):
        k = max(math.ceil(x), 1)
        return float(self._table.survival(k - 1))

    def sample(self, size, rng):
        v = rng.random(size)
        return self._table.invert(np.ravel(v)).reshape(np.shape(v))

    def size_biased(self, size, rng):
        if self.s <= 2.0:
            raise SpecError("size-biased zeta law needs a finite mean (s > 2)")
        return Zeta(self.s - 1.0).sample(size, rng)

    def __str__(self):
        return f"zeta:{self.s!r}"


class FinitePmf(InterarrivalSpec):
    """Explicit probability table on finitely many positive reals."""

    kind = "finite_pmf"

    def __init__(self, values, probs):
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if values.ndim != 1 or values.shape != probs.shape or values.size == 0:
            raise SpecError("pmf table needs matching non-empty value/probability columns")
        if np.any(values <= 0):
            raise SpecError("support points must be strictly positive")
        if np.any(probs < 0):
            raise SpecError("negative probability in pmf table")
        total = probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise SpecError(f"pmf sums to {total!r}, not 1")
        keep = probs > 0
        order = np.argsort(values[keep])
        self.values = values[keep][order]
        self.probs = probs[keep][order] / total
        if np.unique(self.values).size != self.values.size:
            raise SpecError("repeated support point in pmf table")
        self._int = bool(np.all(self.values == np.round(self.values)))

    @classmethod
    def from_table(cls, values, probs=None):
        values = list(values)
        if probs is None:
            probs = [1.0 / len(values)] * len(values)
        return cls(values, probs)

    @classmethod
    def from_csv(cls, path):
        values, probs = read_pmf_csv(path)
        return cls(values, probs)

    integer_valued = property(lambda self: self._int)
    finite_support = property(lambda self: True)

    def support(self, upto=None):
        return self.values.astype(np.int64) if self._int else self.values.copy()

    def pmf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.values, x)
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.where(self.values[idx] == x, self.probs[idx], 0.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        return 1.0 - cum[np.searchsorted(self.values, x, side="right")]

    def tail_ge(self, x):
        return float(self.probs[self.values >= x].sum())

    def sample(self, size, rng):
        idx = rng.choice(len(self.values), size=size, p=self.probs)
        out = self.values[idx]
        return out.astype(np.int64) if self._int else out

    def size_biased(self, size, rng):
        w = self.values * self.probs
        idx = rng.choice(len(self.values), size=size, p=w / w.sum())
        out = self.values[idx]
        return out.astype(np.int64) if self._int else out

    def __str__(self):
        def fmt(v):
            return str(int(v)) if self._int else repr(float(v))
        return "pmf:" + ",".join(f"{fmt(v)}={float(p)!r}" for v, p in zip(self.values, self.probs))


class Scaled(InterarrivalSpec):
    """``factor * inner`` for a positive real factor."""

    kind = "scaled"

    def __init__(self, inner: InterarrivalSpec, factor):
        factor = float(factor)
        if not factor > 0:
            raise SpecError("scale factor must be positive")
        self.inner = inner
        self.factor = factor

    @property
    def _int_factor(self):
        return self.factor == round(self.factor)

    @property
    def integer_valued(self):
        return self.inner.integer_valued and self._int_factor

    @property
    def finite_support(self):
        return self.inner.finite_support

    def support(self, upto=None):
        inner_upto = None if upto is None else upto / self.factor
        pts = self.inner.support(inner_upto) * self.factor
        return pts.astype(np.int64) if self.integer_valued else pts

    def pmf(self, x):
        return self.inner.pmf(np.asarray(x, dtype=float) / self.factor)

    def sf(self, x):
        x = np.asarray(x, dtype=float) / self.factor
        if self.inner.integer_valued:
            x = np.floor(x + 1e-12)
        return self.inner.sf(x)

    def tail_ge(self, x):
        return self.inner.tail_ge(x / self.factor)

    def sample(self, size, rng):
        out = self.inner.sample(size, rng) * self.factor
        return np.round(out).astype(np.int64) if self.integer_valued else out

    def size_biased(self, size, rng):
        out = self.inner.size_biased(size, rng) * self.factor
        return np.round(out).astype(np.int64) if self.integer_valued else out

    def __str__(self):
        f = int(self.factor) if self._int_factor else self.factor
        return f"scaled:{f}:{self.inner}"


def parse_spec(text: str) -> InterarrivalSpec:
    """Parse the compact spec language.

    ``det:1``, ``geometric:0.5``, ``zeta:1.5``, ``uniform:1,2``,
    ``pmf:1=0.25,2=0.75``, ``pmf:@table.csv``, ``scaled:2:geometric:0.5``.
    """
    if isinstance(text, InterarrivalSpec):
        return text
    text = text.strip()
    kind, _, arg = text.partition(":")
    kind = kind.lower()
    try:
        if kind in ("det", "deterministic"):
            return Deterministic(int(arg))
        if kind in ("geometric", "geom"):
            return Geometric(float(arg))
        if kind == "zeta":
            return Zeta(float(arg))
        if kind == "uniform":
            return FinitePmf.from_table([float(v) for v in arg.split(",")])
        if kind in ("pmf", "finite_pmf"):
            if arg.startswith("@"):
                return FinitePmf.from_csv(arg[1:])
            pairs = [item.split("=") for item in arg.split(",")]
            return FinitePmf([float(v) for v, _ in pairs], [float(p) for _, p in pairs])
        if kind == "scaled":
            factor, _, inner = arg.partition(":")
            return Scaled(parse_spec(inner), float(factor))
    except (ValueError, IndexError) as exc:
        raise SpecError(f"cannot parse spec {text!r}: {exc}") from exc
    raise SpecError(f"unknown spec kind {kind!r} in {text!r}")


def spec_from_keyvalue(text: str) -> InterarrivalSpec:
    entries = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    return parse_spec(entries["spec"])


def read_pmf_csv(path):
    values, probs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                v, p = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            values.append(v)
            probs.append(p)
    return values, probs


def write_pmf_csv(path, values, probs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "probability"])
        for v, p in zip(values, probs):
            w.writerow([v, repr(float(p))])


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentResult:
    finite: bool
    value: float = math.inf
    error: float = 0.0

    def __str__(self):
        return f"finite({self.value!r})" if self.finite else "infinite"


def _series_with_ratio_bound(term, start, ratio_bound, tol=1e-15, kmax=10**7):
    """Sum term(k) for k >= start; the tail after k is bounded geometrically."""
    total = 0.0
    k = start
    while k < kmax:
        t = term(k)
        total += t
        r = ratio_bound(k)
        if r < 1.0:
            tail = term(k + 1) / (1.0 - r)
            if tail < tol * max(total, 1e-300):
                return total, tail
        k += 1
    raise ArithmeticError("series did not converge")


def check_moment(spec: InterarrivalSpec, eta: float) -> MomentResult:
    """E(xi^eta): exact for closed forms, certified series otherwise."""
    if not eta > 0:
        raise SpecError("moment order must be positive")
    if isinstance(spec, Deterministic):
        return MomentResult(True, float(spec.value) ** eta)
    if isinstance(spec, FinitePmf):
        return MomentResult(True, float(np.sum(spec.values ** eta * spec.probs)))
    if isinstance(spec, Geometric):
        q, r = spec.q, 1.0 - spec.q
        if float(eta).is_integer():
            # q * Li_{-eta}(r) / r, evaluated in high precision
            with mpmath.workdps(40):
                val = mpmath.mpf(q) * mpmath.polylog(-int(eta), r) / r
            return MomentResult(True, float(val), 1e-15 * float(val))
        val, err = _series_with_ratio_bound(
            lambda k: k ** eta * q * r ** (k - 1), 1,
            lambda k: ((k + 2) / (k + 1)) ** eta * r)
        return MomentResult(True, val, err)
    if isinstance(spec, Zeta):
        if eta >= spec.s - 1.0:
            return MomentResult(False)
        with mpmath.workdps(40):
            val = mpmath.zeta(spec.s - eta) / mpmath.zeta(spec.s)
        return MomentResult(True, float(val), 1e-15 * float(val))
    if isinstance(spec, Scaled):
        inner = check_moment(spec.inner, eta)
        if not inner.finite:
            return inner
        c = spec.factor ** eta
        return MomentResult(True, c * inner.value, c * inner.error)
    raise SpecError(f"no moment rule for {spec}")


@dataclass(frozen=True)
class StationaryDelayPmf:
    pmf: np.ndarray
    tail: float

    def __iter__(self):
        return iter((self.pmf, self.tail))


def _require_finite_mean(spec):
    mean = check_moment(spec, 1.0)
    if not mean.finite:
        raise SpecError("stationary delay undefined: interarrival mean is infinite")
    return mean.value


def stationary_delay_pmf(spec: InterarrivalSpec, kmax: int) -> StationaryDelayPmf:
    """rho_k = P(xi > k) / E(xi) for k <= kmax, with the residual mass."""
    spec._require_integer("stationary delay")
    mean = _require_finite_mean(spec)
    if kmax < 0:
        raise SpecError("kmax must be non-negative")
    k = np.arange(kmax + 1)
    rho = spec.sf(k) / mean
    if isinstance(spec, Geometric):
        tail = (1.0 - spec.q) ** (kmax + 1)
    elif spec.finite_support:
        # E(xi - kmax - 1)^+ / E(xi)
        vals = spec.support().astype(float)
        tail = float(np.sum(np.maximum(vals - kmax - 1, 0.0) * spec.pmf(vals))) / mean
    else:
        tail = max(0.0, 1.0 - float(rho.sum()))
    return StationaryDelayPmf(rho, tail)


def stationary_moment(spec: InterarrivalSpec, eps: float, jmax: int = 10**6):
    """E(rho^eps) for the stationary delay, with a certified error bound.

    Uses E(rho^eps) = E[F(xi - 1)] / E(xi), F(n) = sum_{k<=n} k^eps, and
    bounds the truncated part by E[xi^(1+eps); xi > J].
    Returns ``(value, error)``; ``(inf, 0)`` when the moment is infinite.
    """
    spec._require_integer("stationary delay moments")
    mean = _require_finite_mean(spec)
    if spec.finite_support:
        vals = spec.support().astype(np.int64)
        top = int(vals.max())
        F = np.concatenate([[0.0], np.cumsum(np.arange(1, top + 1, dtype=float) ** eps)])
        return float(np.sum(F[vals - 1] * spec.pmf(vals))) / mean, 0.0
    if isinstance(spec, Geometric):
        q, r = spec.q, 1.0 - spec.q
        # rho ~ geometric on {0, 1, ...}
        val, err = _series_with_ratio_bound(
            lambda k: k ** eps * q * r ** k, 1, lambda k: ((k + 2) / (k + 1)) ** eps * r)
        return val, err
    big = check_moment(spec, 1.0 + eps)
    if not big.finite:
        return math.inf, 0.0
    j = np.arange(1, jmax + 1, dtype=float)
    pj = spec.pmf(j)
    F = np.concatenate([[0.0], np.cumsum(j ** eps)])
    partial = float(np.sum(F[np.arange(jmax)] * pj))
    tail = max(big.value - float(np.sum(j ** (1.0 + eps) * pj)), 0.0) + big.error
    return (partial + tail / 2.0) / mean, (tail / 2.0) / mean


# --------------------------------------------------------------------------
# delays
# --------------------------------------------------------------------------

class DelaySpec:
    kind = ""

    @staticmethod
    def dirac(k) -> "Dirac":
        return Dirac(k)

    @staticmethod
    def stationary() -> "Stationary":
        return Stationary()

    @staticmethod
    def explicit_pmf(values, probs) -> "ExplicitDelay":
        return ExplicitDelay(values, probs)

    def sample(self, spec: InterarrivalSpec, size, rng) -> np.ndarray:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and str(self) == str(other)

    def __hash__(self):
        return hash(str(self))

    def __repr__(self):
        return f"DelaySpec({str(self)!r})"


class Dirac(DelaySpec):
    kind = "dirac"

    def __init__(self, k):
        k = int(k)
        if k < 0:
            raise SpecError("delay must be non-negative")
        self.value = k

    def sample(self, spec, size, rng):
        return np.full(size, self.value, dtype=np.int64)

    def __str__(self):
        return f"dirac:{self.value}"


class Stationary(DelaySpec):
    kind = "stationary"

    def sample(self, spec, size, rng):
        spec._require_integer("stationary delay")
        _require_finite_mean(spec)
        if isinstance(spec, Geometric):
            return (rng.geometric(spec.q, size=size) - 1).astype(np.int64)
        # uniform position inside a size-biased gap
        big = spec.size_biased(size, rng)
        return np.floor(rng.random(size) * big).astype(np.int64)

    def __str__(self):
        return "stationary"


class ExplicitDelay(DelaySpec):
    kind = "explicit_pmf"

    def __init__(self, values, probs):
        self.values = np.asarray(values, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=float)
        if np.any(self.values < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise SpecError("delay pmf must live on non-negative integers and sum to 1")
        self.probs = self.probs / self.probs.sum()

    def sample(self, spec, size, rng):
        return self.values[rng.choice(len(self.values), size=size, p=self.probs)]

    def __str__(self):
        return "pmf:" + ",".join(f"{v}={p!r}" for v, p in zip(self.values, self.probs))


def parse_delay(text) -> DelaySpec:
    if isinstance(text, DelaySpec):
        return text
    kind, _, arg = str(text).strip().partition(":")
    if kind in ("dirac", "delta"):
        return Dirac(int(arg or 0))
    if kind in ("stationary", "rho"):
        return Stationary()
    if kind in ("pmf", "explicit_pmf"):
        pairs = [item.split("=") for item in arg.split(",")]
        return ExplicitDelay([int(v) for v, _ in pairs], [float(p) for _, p in pairs])
    raise SpecError(f"unknown delay {text!r}")


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RenewalTrajectory:
    """One renewal path observed on {0, ..., horizon}.

    ``next_arrival`` is the first arrival strictly after the horizon; it is
    what determines the forward recurrence times at the end of the window.
    """

    horizon: int
    arrivals: np.ndarray
    indicator: np.ndarray
    forward: np.ndarray
    next_arrival: int

    def check(self):
        n = np.arange(self.horizon + 1)
        assert np.all(np.diff(self.arrivals) > 0)
        assert np.array_equal(self.indicator.astype(bool), np.isin(n, self.arrivals))
        assert np.array_equal(self.forward == 0, self.indicator.astype(bool))
        step = self.forward[:-1] > 0
        assert np.all(self.forward[1:][step] == self.forward[:-1][step] - 1)


def trajectory_from_interarrivals(delay: int, interarrivals: Sequence[int], horizon: int) -> RenewalTrajectory:
    """Build X, Y and Z from an explicit delay and gap list.

    The gaps must carry the path past ``horizon``.
    """
    pts = np.concatenate([[delay], delay + np.cumsum(np.asarray(interarrivals, dtype=np.int64))])
    pts = pts.astype(np.int64)
    if pts[-1] <= horizon:
        raise SpecError("interarrivals do not reach past the horizon")
    inside = pts[pts <= horizon]
    nxt = int(pts[len(inside)])
    n = np.arange(horizon + 1)
    nxt_idx = np.searchsorted(pts, n, side="left")
    forward = pts[nxt_idx] - n
    indicator = (forward == 0).astype(np.int8)
    return RenewalTrajectory(horizon, inside, indicator, forward, nxt)


def sample_renewal(spec: InterarrivalSpec, delay: DelaySpec, horizon: int, stream) -> RenewalTrajectory:
    """Sample one trajectory on {0, ..., horizon}."""
    spec._require_integer("renewal sampling")
    if horizon < 0:
        raise SpecError("horizon must be non-negative")
    rng = as_generator(stream)
    d = int(delay.sample(spec, 1, rng)[0])
    gaps = []
    pos = d
    while pos <= horizon:
        chunk = spec.sample(max(16, (horizon - pos) // 2 + 1), rng)
        for g in chunk:
            gaps.append(int(g))
            pos += int(g)
            if pos > horizon:
                break
    if not gaps:
        gaps = [int(spec.sample(1, rng)[0])]
    traj = trajectory_from_interarrivals(d, gaps, horizon)
    if __debug__:
        traj.check()
    return traj


def sample_forward_recurrence(spec, delay, times, size, stream) -> np.ndarray:
    """Forward recurrence times Z_t at the given times for ``size`` replicas.

    Returns an int64 array of shape (size, len(times)).
    """
    spec._require_integer("renewal sampling")
    rng = as_generator(stream)
    times = np.asarray(times, dtype=np.int64)
    order = np.argsort(times, kind="stable")
    cur = delay.sample(spec, size, rng).astype(np.int64)
    out = np.empty((size, len(times)), dtype=np.int64)
    for idx in order:
        t = times[idx]
        behind = np.flatnonzero(cur < t)
        while behind.size:
            cur[behind] += spec.sample(behind.size, rng)
            behind = behind[cur[behind] < t]
        out[:, idx] = cur - t
    return out


@dataclass(frozen=True)
class ShiftCheck:
    tv_distance: float
    tv_bound: float
    chi2_pvalue: float | None = None
    exact_tv: float | None = None


def shift_stationarity_check(spec, m: int, nsamples: int, stream, window: int = 0,
                             delay: DelaySpec | None = None) -> ShiftCheck:
    """Compare the law of (Z_m..Z_{m+w}) with that of (Z_0..Z_w).

    The two windows are drawn from independent halves of the replicas.
    When an exact stationary law is available (finite support or geometric)
    the shifted sample is also tested against it by chi-square.
    """
    from scipy import stats
    from . import oracles

    delay = delay or Stationary()
    s = as_stream(stream)
    w = int(window)
    a = sample_forward_recurrence(spec, delay, np.arange(m, m + w + 1), nsamples, s.child(0))
    b = sample_forward_recurrence(spec, delay, np.arange(0, w + 1), nsamples, s.child(1))
    keys_a, ca = np.unique(a, axis=0, return_counts=True)
    keys_b, cb = np.unique(b, axis=0, return_counts=True)
    allkeys = {tuple(k) for k in keys_a} | {tuple(k) for k in keys_b}
    pa = {tuple(k): c / nsamples for k, c in zip(keys_a, ca)}
    pb = {tuple(k): c / nsamples for k, c in zip(keys_b, cb)}
    tv = 0.5 * sum(abs(pa.get(k, 0.0) - pb.get(k, 0.0)) for k in allkeys)
    pbar = np.array([(pa.get(k, 0.0) + pb.get(k, 0.0)) / 2 for k in allkeys])
    bound = 3.0 * 0.5 * float(np.sum(np.sqrt(2.0 * pbar * (1 - pbar) / nsamples)))

    law = oracles.stationary_window_law(spec, w)
    if law is None:
        return ShiftCheck(tv, bound)
    keys = sorted(law)
    expected = np.array([law[k] for k in keys])
    observed = np.array([pa.get(k, 0.0) * nsamples for k in keys])
    outside = nsamples - observed.sum()
    exact_tv = 0.5 * (np.abs(observed / nsamples - expected).sum() + outside / nsamples)
    # cells expected below 5 counts, and anything outside the law, share one bin
    big = expected * nsamples >= 5
    obs = list(observed[big])
    exp = list(expected[big] * nsamples)
    obs_other = nsamples - float(np.sum(obs))
    exp_other = nsamples - float(np.sum(exp))
    if exp_other > 1e-9:
        obs.append(obs_other)
        exp.append(exp_other)
    if exp_other <= 1e-9 and obs_other > 0.5:
        pval = 0.0
    elif len(obs) < 2:
        pval = 1.0
    else:
        pval = float(stats.chisquare(obs, exp).pvalue)
    return ShiftCheck(tv, bound, pval, float(exact_tv))


# --------------------------------------------------------------------------
# coupling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingSample:
    """A coupling time, or ``value=None`` if censored at ``cap``."""

    value: int | None
    cap: int

    @property
    def censored(self) -> bool:
        return self.value is None


def _first_arrival_from(start, spec, rng, t0):
    cur = start.copy()
    t0 = np.broadcast_to(t0, cur.shape)
    behind = np.flatnonzero(cur < t0)
    while behind.size:
        cur[behind] += spec.sample(behind.size, rng)
        behind = behind[cur[behind] < t0[behind]]
    return cur


def sample_coupling_times(spec, delay_a, delay_b, cap: int, size: int, stream) -> np.ndarray:
    """Vectorised coupling times; censored entries are -1."""
    spec._require_integer("coupling")
    if cap < 1:
        raise SpecError("cap must be at least 1")
    rng = as_generator(stream)
    a = _first_arrival_from(delay_a.sample(spec, size, rng), spec, rng, 1)
    b = _first_arrival_from(delay_b.sample(spec, size, rng), spec, rng, 1)
    out = np.full(size, -1, dtype=np.int64)
    live = np.arange(size)
    while live.size:
        aa, bb = a[live], b[live]
        hit = aa == bb
        out[live[hit & (aa <= cap)]] = aa[hit & (aa <= cap)]
        keep = ~hit & (np.minimum(aa, bb) <= cap)
        live = live[keep]
        if not live.size:
            break
        lag_a = live[a[live] < b[live]]
        lag_b = live[b[live] < a[live]]
        # catch the lagging copy up to the leader in one vectorised pass
        if lag_a.size:
            a[lag_a] = _first_arrival_from(a[lag_a], spec, rng, b[lag_a])
        if lag_b.size:
            b[lag_b] = _first_arrival_from(b[lag_b], spec, rng, a[lag_b])
    return out


def coupling_time(spec, delay_a, delay_b, cap: int = 10**8, stream=None) -> CouplingSample:
    """First k >= 1 at which two independent copies renew together."""
    ok, period = is_aperiodic(spec)
    if not ok:
        raise SpecError(f"coupling needs an aperiodic interarrival law (period {period})")
    t = int(sample_coupling_times(spec, delay_a, delay_b, cap, 1, stream)[0])
    return CouplingSample(None if t < 0 else t, cap)


# --------------------------------------------------------------------------
# decoupling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CylinderEvent:
    """{Y_{t_i} = b_i for all i}; positions are offsets from an anchor."""

    positions: tuple[int, ...]
    values: tuple[int, ...]

    @classmethod
    def renewal_at(cls, t: int = 0) -> "CylinderEvent":
        return cls((t,), (1,))

    def shifted(self, anchor: int) -> "CylinderEvent":
        return CylinderEvent(tuple(p + anchor for p in self.positions), self.values)

    def indicator(self, Y: np.ndarray, columns: dict[int, int]) -> np.ndarray:
        ok = np.ones(Y.shape[0], dtype=bool)
        for p, v in zip(self.positions, self.values):
            ok &= Y[:, columns[p]] == v
        return ok


@dataclass(frozen=True)
class DecouplingEstimate:
    n: int
    gap: float
    ci_halfwidth: float
    exact_gap: float | None = None

    def to_json(self) -> str:
        rec = {"n": self.n, "gap": self.gap, "ci": self.ci_halfwidth}
        if self.exact_gap is not None:
            rec["exact_gap"] = self.exact_gap
        return json.dumps(rec)


@dataclass
class DecouplingReport:
    eps: float
    m: int
    estimates: list[DecouplingEstimate]
    c_hat: float
    c_hat_upper: float
    c_hat_exact: float | None = None

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for e in self.estimates:
                fh.write(e.to_json() + "\n")


def estimate_c1(spec, eps: float, m: int, separations, nsamples: int, stream,
                event_a: CylinderEvent | None = None,
                event_b: CylinderEvent | None = None) -> DecouplingReport:
    """Empirical decoupling gaps P(A and B) - P(A)P(B) under the stationary delay.

    ``event_a`` uses absolute times inside {0..m}; ``event_b`` uses offsets
    from m + n.  Defaults are A = {Y_m = 1}, B = {Y_{m+n} = 1}.  Cylinder
    events only give a lower bound on the supremum over all events.
    """
    from . import oracles

    spec._require_integer("decoupling")
    ok, period = is_aperiodic(spec)
    if not ok:
        raise SpecError(f"decoupling needs an aperiodic interarrival law (period {period})")
    if not check_moment(spec, 1.0 + eps).finite:
        raise SpecError(f"E(xi^(1+eps)) is infinite for {spec} at eps={eps}: c1 is not defined")
    event_a = event_a or CylinderEvent.renewal_at(m)
    event_b = event_b or CylinderEvent.renewal_at(0)
    if max(event_a.positions) > m or min(event_a.positions) < 0:
        raise SpecError("event A must depend on Y_0..Y_m only")
    if min(event_b.positions) < 0:
        raise SpecError("event B offsets must be non-negative")
    separations = [int(n) for n in separations]
    times = sorted(set(event_a.positions) | {m + n + p for n in separations for p in event_b.positions})
    col = {t: i for i, t in enumerate(times)}
    Z = sample_forward_recurrence(spec, Stationary(), times, nsamples, stream)
    Y = (Z == 0).astype(np.int8)
    ia = event_a.indicator(Y, col).astype(float)
    pa = ia.mean()
    estimates = []
    for n in separations:
        ib = event_b.shifted(m + n).indicator(Y, col).astype(float)
        pb = ib.mean()
        gap = float((ia * ib).mean() - pa * pb)
        psi = ia * ib - pb * ia - pa * ib
        se = float(psi.std(ddof=1) / math.sqrt(nsamples)) if nsamples > 1 else math.inf
        exact = oracles.exact_gap(spec, event_a, event_b.shifted(m + n))
        estimates.append(DecouplingEstimate(n, gap, 3.0 * se, exact))
    ns = np.array([max(e.n, 1) for e in estimates], dtype=float)
    gaps = np.abs([e.gap for e in estimates])
    ci = np.array([e.ci_halfwidth for e in estimates])
    c_hat = float(np.max(gaps * ns ** eps)) if estimates else 0.0
    c_up = float(np.max((gaps + ci) * ns ** eps)) if estimates else 0.0
    c_exact = None
    if estimates and all(e.exact_gap is not None for e in estimates):
        c_exact = float(np.max(np.abs([e.exact_gap for e in estimates]) * ns ** eps))
    return DecouplingReport(eps, m, estimates, c_hat, c_up, c_exact)


@dataclass(frozen=True)
class CouplingC1:
    value: float
    rho_moment: float
    coupling_moment: float
    coupling_se: float
    censored: int


def coupling_c1(spec, eps: float, nsamples: int, stream, cap: int = 10**8) -> CouplingC1:
    """c1 = 2^eps E(rho^eps) + 2^eps E(T^eps), T under delays (0, rho).

    Censored coupling times enter at the cap, so with censoring the value
    is a lower estimate.
    """
    rho_m, _ = stationary_moment(spec, eps)
    T = sample_coupling_times(spec, Dirac(0), Stationary(), cap, nsamples, stream)
    censored = int(np.sum(T < 0))
    Tv = np.where(T < 0, cap, T).astype(float) ** eps
    tm = float(Tv.mean())
    se = float(Tv.std(ddof=1) / math.sqrt(nsamples)) if nsamples > 1 else math.inf
    return CouplingC1(2.0 ** eps * (rho_m + tm), rho_m, tm, se, censored)


# --------------------------------------------------------------------------
# periodicity
# --------------------------------------------------------------------------

def _support_gcd(spec) -> int:
    if isinstance(spec, (Geometric, Zeta)):
        return 1
    if isinstance(spec, Deterministic):
        return spec.value
    if isinstance(spec, FinitePmf):
        return reduce(math.gcd, (int(v) for v in spec.values))
    if isinstance(spec, Scaled):
        return int(round(spec.factor)) * _support_gcd(spec.inner)
    raise SpecError(f"no gcd rule for {spec}")


def is_aperiodic(spec) -> tuple[bool, int]:
    spec._require_integer("periodicity")
    m = _support_gcd(spec)
    return m == 1, m


@dataclass(frozen=True)
class AperiodicReduction:
    """xi' = ceil(xi) / m with m the gcd of the support of ceil(xi).

    Percolation for xi' at parameter p transports to xi at p^(1/m).
    """

    spec: InterarrivalSpec
    period: int
    original: InterarrivalSpec

    def transport_p(self, p: float) -> float:
        return p ** (1.0 / self.period)


def reduce_to_aperiodic(spec: InterarrivalSpec) -> AperiodicReduction:
    if spec.integer_valued:
        m = _support_gcd(spec)
        if m == 1:
            return AperiodicReduction(spec, 1, spec)
        if isinstance(spec, Deterministic):
            return AperiodicReduction(Deterministic(1), m, spec)
        if isinstance(spec, FinitePmf):
            return AperiodicReduction(FinitePmf(spec.values // m, spec.probs), m, spec)
        if isinstance(spec, Scaled):
            inner = reduce_to_aperiodic(spec.inner)
            return AperiodicReduction(inner.spec, m, spec)
    if spec.finite_support:
        ceil = np.ceil(spec.support().astype(float) - 1e-12)
        probs = spec.pmf(spec.support())
        vals, inv = np.unique(ceil, return_inverse=True)
        merged = np.bincount(inv, weights=probs)
        m = reduce(math.gcd, (int(v) for v in vals))
        return AperiodicReduction(FinitePmf(vals / m, merged), m, spec)
    raise SpecError(f"ceil-reduction of {spec} has no closed representation")

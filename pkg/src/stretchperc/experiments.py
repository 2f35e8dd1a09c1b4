"""End-to-end experiments and reproducible, resumable runs.

Every experiment is split into *units* (chunks of replicas, or one
estimator call).  A unit draws randomness only from per-replica streams
derived from ``(master seed, task index, ...)``, so the merged result does
not depend on how units are scheduled: serial and process-parallel runs
write byte-identical records.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import expit

from . import _kernels as K
from .multiscale import ScaleSystem, estimate_pk, exact_p0, validate_L0, validate_params
from .percolation import (cd_event, dependency_rectangle, estimate_qk, ladder_certificate,
                          ladder_extent, realize_environment, sample_window)
from .renewal import (SpecError, check_moment, estimate_c1, parse_delay, parse_spec,
                      stationary_moment)
from .rng import DEFAULT_SEED, SEED_ENV_VAR, Stream
from .stats import wilson_interval

WORKERS_ENV_VAR = "STRETCHPERC_WORKERS"
TASKS = ("sweep", "heavytail", "certificate", "audit")
# keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("output", "workers")
# stream id reserved for bootstrap resampling inside a task
_BOOTSTRAP_ID = 2**31 - 1


class InvariantError(AssertionError):
    """An assertion-grade invariant failed."""


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, serialisable description of a run.

    Exponents are kept as text so rational values such as ``6/5`` survive a
    round trip exactly.
    """

    spec: str = "det:1"
    delay: str = "stationary"
    eps: str = "1"
    alpha: str = "0.5"
    gamma: str = "1.2"
    mu: str = "0.9"
    beta: str = "0.95"
    waive: bool = False
    L0: int = 300
    kmax: int = 1
    height_mode: str = "desk"
    h: int = 4
    formulation: str = "inhomogeneous"
    p_grid: tuple[float, ...] = (0.0, 0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7, 1.0)
    sizes: tuple[int, ...] = (64,)
    replicas: int = 200
    chunk: int = 25
    seed: int = DEFAULT_SEED
    output: str = "run.jsonl"
    tasks: tuple[str, ...] = ()
    workers: int = 1
    p: float = 0.9
    eta: float = 0.5
    cell_budget: int = 10**8
    i_min: int = 2
    probe_budget: int = 5 * 10**7
    k0: int = 0
    K: int = 1
    qk_envs: int = 4
    qk_configs: int = 500
    c1_m: int = 8
    c1_separations: int = 16
    samples: int = 20000
    bootstrap: int = 200

    def __post_init__(self):
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown tasks {bad}; choose from {TASKS}")
        if self.replicas < 0 or self.chunk < 1 or self.workers < 1:
            raise ConfigError("replicas >= 0, chunk >= 1 and workers >= 1 are required")
        if any(not 0.0 <= p <= 1.0 for p in self.p_grid) or not 0.0 <= self.p <= 1.0:
            raise ConfigError("percolation parameters must lie in [0, 1]")
        if list(self.p_grid) != sorted(self.p_grid):
            raise ConfigError("p_grid must be sorted")
        if self.height_mode not in ("desk", "exact_log"):
            raise ConfigError(f"unknown height mode {self.height_mode!r}")

    # serialisation -------------------------------------------------------

    def to_text(self, include_execution: bool = True) -> str:
        lines = []
        for f in fields(self):
            if not include_execution and f.name in EXECUTION_KEYS:
                continue
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
            key, val = (t.strip() for t in line.split("=", 1))
            values[key] = val
        return (base or cls()).with_overrides(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def with_overrides(self, **values) -> "ExperimentConfig":
        """Replace fields from text or typed values; unknown keys are rejected."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        typed = {k: _convert(k, v) for k, v in values.items()}
        return replace(self, **typed)

    def as_dict(self, include_execution: bool = False) -> dict:
        d = asdict(self)
        if not include_execution:
            for k in EXECUTION_KEYS:
                d.pop(k)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text(include_execution=False).encode()).hexdigest()[:16]

    # derived objects -----------------------------------------------------

    def interarrival(self):
        return parse_spec(self.spec)

    def delay_spec(self):
        return parse_delay(self.delay)

    def stream(self) -> Stream:
        return Stream(self.seed)


_CONVERTERS = {
    "waive": _bool, "p_grid": _floats, "sizes": _ints, "tasks": _words,
    "p": float, "eta": float,
    "spec": str, "delay": str, "eps": str, "alpha": str, "gamma": str, "mu": str, "beta": str,
    "height_mode": str, "formulation": str, "output": str,
}


def _convert(key, value):
    if not isinstance(value, str):
        if isinstance(value, list):
            return tuple(value)
        return value
    conv = _CONVERTERS.get(key, int)
    try:
        return conv(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc


def apply_environment(config: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Apply the seed and worker-count environment variables."""
    environ = os.environ if environ is None else environ
    over = {}
    if environ.get(SEED_ENV_VAR):
        over["seed"] = environ[SEED_ENV_VAR]
    if environ.get(WORKERS_ENV_VAR):
        over["workers"] = environ[WORKERS_ENV_VAR]
    return config.with_overrides(**over) if over else config


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, NaN/inf to None, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False)


# --------------------------------------------------------------------------
# p sweeps
# --------------------------------------------------------------------------

def _sweep_environment(spec, delay, formulation, N, stream):
    if formulation == "dilute":
        return realize_environment(spec, delay, horizon=N, stream=stream)
    if formulation in ("inhomogeneous", "stretched_lengths"):
        return realize_environment(spec, delay, ncolumns=N, stream=stream)
    raise ConfigError(f"sweeps support inhomogeneous, dilute and stretched_lengths, not {formulation!r}")


def sweep_replica(config: ExperimentConfig, N: int, stream: Stream) -> list[int]:
    """Horizontal crossing of the N x N box at every p of the grid, on shared uniforms."""
    spec, delay = config.interarrival(), config.delay_spec()
    env = _sweep_environment(spec, delay, config.formulation, N, stream.child(0))
    win = sample_window(env, config.p_grid[0], (N, N), config.formulation, stream.child(1))
    out = []
    for p in config.p_grid:
        w = win.rethreshold(p)
        out.append(int(K.rect_crossing(w.h.view(np.uint8), w.v.view(np.uint8), 0, N, 0, N, 0)))
    return out


def _logistic(p, pc, scale):
    return expit((p - pc) / scale)


def fit_threshold(p_grid, mean_curve) -> float | None:
    """Where the fitted logistic curve crosses 1/2; None if the data never straddle 1/2."""
    x = np.asarray(p_grid, dtype=float)
    y = np.asarray(mean_curve, dtype=float)
    if y.max() <= 0.5 or y.min() >= 0.5:
        return None
    start = float(np.interp(0.5, y, x)) if np.all(np.diff(y) >= 0) else float(x[np.argmin(abs(y - 0.5))])
    popt, _ = curve_fit(_logistic, x, y, p0=(start, 0.05), bounds=([0.0, 1e-4], [1.0, 1.0]))
    return float(popt[0])


def summarize_sweep(config: ExperimentConfig, N: int, curves: np.ndarray, rng) -> dict:
    """Mean curve, per-replica monotonicity and a bootstrap interval for p_c."""
    curves = np.asarray(curves, dtype=np.int64).reshape(-1, len(config.p_grid))
    failures = []
    dec = np.flatnonzero(np.any(np.diff(curves, axis=1) < 0, axis=1))
    if dec.size:
        failures.append(f"N={N}: non-monotone crossing curve for replicas {dec[:10].tolist()}")
    R = curves.shape[0]
    mean = curves.mean(axis=0) if R else np.full(len(config.p_grid), np.nan)
    pc = fit_threshold(config.p_grid, mean) if R else None
    boot = []
    if pc is not None and config.bootstrap > 0:
        idx = rng.integers(0, R, size=(config.bootstrap, R))
        for row in idx:
            b = fit_threshold(config.p_grid, curves[row].mean(axis=0))
            if b is not None:
                boot.append(b)
    ci = (float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5))) if boot else (None, None)
    ends = {}
    for p, m in zip(config.p_grid, mean):
        if p in (0.0, 1.0):
            ends[repr(p)] = float(m)
    return {"N": N, "p_grid": list(config.p_grid), "probability": mean, "replicas": R,
            "p_c": pc, "p_c_ci95": ci, "bootstrap_fits": len(boot), "endpoints": ends,
            "failures": failures}


def sweep_p(config: ExperimentConfig, stream: Stream | None = None, strict: bool = True) -> list[dict]:
    """Crossing-probability curves and p_c estimates for every size in ``config.sizes``."""
    stream = stream or config.stream()
    out = []
    for si, N in enumerate(config.sizes):
        curves = [sweep_replica(config, N, stream.child(si, r)) for r in range(config.replicas)]
        res = summarize_sweep(config, N, np.array(curves), stream.child(si, _BOOTSTRAP_ID).generator())
        if strict and res["failures"]:
            raise InvariantError("; ".join(res["failures"]))
        out.append(res)
    return out


def ergodicity_probe(config: ExperimentConfig, n_envs: int, stream: Stream | None = None) -> dict:
    """p_c estimates on independent frozen environments, one per group of replicas.

    The estimates should agree within their bootstrap intervals.
    """
    stream = stream or config.stream()
    N = config.sizes[0]
    spec, delay = config.interarrival(), config.delay_spec()
    rows = []
    for e in range(n_envs):
        env = _sweep_environment(spec, delay, config.formulation, N, stream.child(e, 0))
        curves = []
        for r in range(config.replicas):
            win = sample_window(env, config.p_grid[0], (N, N), config.formulation, stream.child(e, 1, r))
            curves.append([int(K.rect_crossing(w.h.view(np.uint8), w.v.view(np.uint8), 0, N, 0, N, 0))
                           for w in (win.rethreshold(p) for p in config.p_grid)])
        rows.append(summarize_sweep(config, N, np.array(curves), stream.child(e, _BOOTSTRAP_ID).generator()))
    los = [r["p_c_ci95"][0] for r in rows if r["p_c_ci95"][0] is not None]
    his = [r["p_c_ci95"][1] for r in rows if r["p_c_ci95"][1] is not None]
    agree = bool(los and his and len(los) == n_envs and max(los) <= min(his))
    return {"N": N, "environments": rows, "intervals_overlap": agree}


# --------------------------------------------------------------------------
# heavy-tail experiment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HeavyTailPlan:
    """Candidate strip widths i and their row counts for a moment exponent eta < 1.

    ``epsilon_tail`` solves 1/eta = 1 + 2 epsilon_tail.  Index i is used by
    an environment when its i-th gap exceeds i^(1 + 2 epsilon_tail); the
    strip R([0, i) x [0, row_count)) has row_count = ceil(exp(i^(1 + epsilon_tail))).
    Widths are capped so that the strip holds at most ``cell_budget`` edges.
    """

    eta: float
    epsilon_tail: float
    indices: tuple[int, ...]
    row_counts: tuple[int, ...]
    cell_budget: int = 10**8

    def __post_init__(self):
        if not self.epsilon_tail > 0:
            raise ValueError("epsilon_tail must be positive (eta < 1)")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")
        if len(self.indices) != len(self.row_counts):
            raise ValueError("one row count per index")

    @classmethod
    def from_eta(cls, eta: float, i_min: int = 2, cell_budget: int = 10**8) -> "HeavyTailPlan":
        if not 0 < eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        et = (1.0 / eta - 1.0) / 2.0
        idx, rows = [], []
        i = max(1, int(i_min))
        while True:
            r = math.ceil(math.exp(i ** (1.0 + et)))
            if 2 * i * r > cell_budget:
                break
            idx.append(i)
            rows.append(r)
            i += 1
        return cls(float(eta), et, tuple(idx), tuple(rows), int(cell_budget))

    def rows(self, i: int) -> int:
        return self.row_counts[self.indices.index(i)]

    def threshold(self, i: int) -> float:
        return i ** (1.0 + 2.0 * self.epsilon_tail)

    def extract(self, gaps) -> list[int]:
        """Planned indices i whose gap xi_i (1-based) exceeds the threshold."""
        g = np.asarray(gaps)
        return [i for i in self.indices if i <= g.size and g[i - 1] > self.threshold(i)]

    def bound_h(self, i: int, p: float) -> float:
        """row_count * p^(i^(1+2 eps)): horizontal crossing needs the long edge open in some row."""
        return self.rows(i) * p ** self.threshold(i)

    def bound_v(self, i: int, p: float) -> float:
        """exp(-row_count (1-p)^i): a vertical crossing needs no fully closed row."""
        return math.exp(-self.rows(i) * (1.0 - p) ** i)

    def no_closed_row(self, i: int, p: float) -> float:
        """(1 - (1-p)^i)^row_count, the quantity bound_v relaxes."""
        return (1.0 - (1.0 - p) ** i) ** self.rows(i)


def heavy_replica(spec, plan: HeavyTailPlan, p: float, nmax: int, stream: Stream,
                  probe_budget: int = 5 * 10**7) -> dict:
    """One environment and one lazily generated configuration.

    Returns the origin cluster radius (capped at ``nmax``, -1 if the search
    budget ran out) and the strip crossings for the planned indices used by
    this environment.
    """
    rng = stream.generator()
    ncols = max(nmax, max(plan.indices, default=1))
    gaps = spec.sample(ncols, rng)
    key = np.uint64(rng.integers(1, 2**63))
    ph = np.power(p, np.asarray(gaps, dtype=float))
    radius, steps = K.origin_radius_lazy(key, ph, float(p), int(nmax), int(probe_budget))
    strips = {}
    for i in plan.extract(gaps):
        rows = plan.rows(i)
        pv = np.full(i, float(p))
        ch = False if np.any(ph[:i] == 0.0) else bool(K.strip_crossing_lazy(key, ph[:i], pv, i, rows, 0))
        cv = bool(K.strip_crossing_lazy(key, ph[:i], pv, i, rows, 1))
        strips[str(i)] = {"h": ch, "v": cv, "xi": int(gaps[i - 1]),
                          "tight_h": min(1.0, rows * float(p) ** float(gaps[i - 1]))}
    return {"radius": int(radius), "steps": int(steps), "strips": strips}


def summarize_heavy_tail(plan: HeavyTailPlan, p: float, sizes, replicas: list[dict]) -> dict:
    radii = np.array([r["radius"] for r in replicas], dtype=np.int64)
    censored = int(np.sum(radii < 0))
    reach = np.where(radii[:, None] < 0, True, radii[:, None] >= np.asarray(sizes)[None, :])
    failures = []
    if np.any(np.diff(reach.astype(np.int8), axis=1) > 0):
        failures.append("P(o <-> dN) increased with N for some replica")
    curve = []
    for col, N in enumerate(sizes):
        k = int(reach[:, col].sum())
        lo, hi = wilson_interval(k, len(replicas))
        curve.append({"N": int(N), "hits": k, "estimate": k / max(len(replicas), 1), "ci": (lo, hi)})
    bounds = []
    for i in plan.indices:
        used = [r["strips"][str(i)] for r in replicas if str(i) in r["strips"]]
        row = {"i": i, "row_count": plan.rows(i), "threshold": plan.threshold(i), "n": len(used),
               "bound_h": plan.bound_h(i, p), "bound_v": plan.bound_v(i, p),
               "no_closed_row": plan.no_closed_row(i, p)}
        for d in ("h", "v"):
            k = sum(u[d] for u in used)
            lo, hi = wilson_interval(k, len(used))
            row[f"hits_{d}"] = k
            row[f"upper_{d}"] = hi if used else None
            b = row[f"bound_{d}"]
            if b <= 1.0 and used:
                row[f"ok_{d}"] = hi <= b
                if hi > b:
                    failures.append(f"i={i}: upper CI {hi:.4g} of C_{d} exceeds bound {b:.4g}")
            else:
                row[f"ok_{d}"] = None  # vacuous bound or no environment used i
        row["tight_h_mean"] = float(np.mean([u["tight_h"] for u in used])) if used else None
        bounds.append(row)
    return {"p": p, "eta": plan.eta, "epsilon_tail": plan.epsilon_tail, "replicas": len(replicas),
            "censored_probes": censored, "connection_curve": curve, "bounds": bounds,
            "failures": failures}


def _check_heavy_tail(spec, eta):
    m = check_moment(spec, eta)
    if m.finite:
        raise SpecError(f"E(xi^{eta}) is finite for {spec}; the heavy-tail experiment needs it infinite")


def heavy_tail_experiment(spec, plan: HeavyTailPlan, p: float, sizes, replicas: int, stream: Stream,
                          probe_budget: int = 5 * 10**7, strict: bool = False) -> dict:
    """Decay of P(o <-> boundary of [0, N]^2) and the strip bound audit.

    Distances are in column-index coordinates of the inhomogeneous lattice.
    """
    spec = parse_spec(spec)
    _check_heavy_tail(spec, plan.eta)
    if not plan.indices:
        raise ValueError("no strip width fits the cell budget")
    sizes = sorted(int(n) for n in sizes)
    reps = [heavy_replica(spec, plan, p, sizes[-1], stream.child(r), probe_budget) for r in range(replicas)]
    res = summarize_heavy_tail(plan, p, sizes, reps)
    if strict and res["failures"]:
        raise InvariantError("; ".join(res["failures"]))
    return res


# --------------------------------------------------------------------------
# ladder certificate
# --------------------------------------------------------------------------

def certificate_system(config: ExperimentConfig, K_: int | None = None) -> ScaleSystem:
    K_ = config.K if K_ is None else K_
    if config.height_mode != "desk":
        raise ConfigError("the certificate experiment needs the desk height schedule")
    return ScaleSystem.build(config.L0, config.gamma, K_ + 1, height_mode="desk", h=config.h)


def certificate_replica(config: ExperimentConfig, system: ScaleSystem, k0: int, K_: int,
                        stream: Stream) -> tuple[bool, bool]:
    W, H = ladder_extent(system, K_)
    if W * H > config.cell_budget:
        raise ValueError(f"ladder window {W}x{H} exceeds the cell budget {config.cell_budget}")
    env = realize_environment(config.interarrival(), config.delay_spec(), horizon=W, stream=stream.child(0))
    win = sample_window(env, config.p, (W, H), "dilute", stream.child(1))
    return ladder_certificate(win, system, k0, K_)


def summarize_certificate(system: ScaleSystem, k0: int, K_: int, pairs, qk: dict) -> dict:
    pairs = np.asarray(pairs, dtype=bool).reshape(-1, 2)
    n = pairs.shape[0]
    cert = int(pairs[:, 0].sum())
    conn = int(pairs[:, 1].sum())
    viol = int(np.sum(pairs[:, 0] & ~pairs[:, 1]))
    freq = cert / n if n else float("nan")
    prod = 1.0
    for k in range(k0, K_ + 1):
        q = qk[str(k)]["q_hat"]
        prod *= max(0.0, 1.0 - 2.0 * q) ** (system.branching(k) - 1)
    sigma = math.sqrt(max(freq * (1 - freq), 0.0) / n) if n else float("nan")
    failures = [f"{viol} configurations with a certificate but no connection"] if viol else []
    return {"k0": k0, "K": K_, "L": system.L, "height_schedule": "desk", "replicas": n,
            "certificates": cert, "connections": conn, "violations": viol,
            "frequency": freq, "sigma": sigma, "product_bound": prod,
            "product_bound_ok": bool(n and freq >= prod - 3 * sigma), "qk": qk, "failures": failures}


def _qk_unit(config: ExperimentConfig, system: ScaleSystem, k: int, stream: Stream) -> dict:
    est = estimate_qk(config.interarrival(), system, config.p, k, config.qk_envs, config.qk_configs, stream)
    return {"q_hat": est.q_hat, "C_fail": est.worst_C_fail, "C_ci": est.worst_C_ci,
            "D_fail": est.worst_D_fail, "D_ci": est.worst_D_ci, "rejections": est.rejections}


def percolation_certificate_experiment(config: ExperimentConfig, k0: int, K_: int,
                                       stream: Stream | None = None) -> dict:
    """Frequency of the ladder certificate, certificate => connection, and the product bound."""
    stream = stream or config.stream()
    system = certificate_system(config, K_)
    pairs = [certificate_replica(config, system, k0, K_, stream.child(0, r)) for r in range(config.replicas)]
    qk = {str(k): _qk_unit(config, system, k, stream.child(1, k)) for k in range(k0, K_ + 1)}
    return summarize_certificate(system, k0, K_, pairs, qk)


def dependency_audit(config: ExperimentConfig, system: ScaleSystem, k: int, trials: int,
                     stream: Stream, cells: int = 3) -> dict:
    """Resample every edge outside a site's dependency rectangle and count state flips.

    Also resamples the edges inside, as a control showing that the site
    state is not constant.
    """
    L, H = system.L[k], system.height(k)
    W, Hw = (cells + 1) * L, (cells + 1) * H
    flips = inside_changes = 0
    for t in range(trials):
        s = stream.child(t)
        rng = s.child(0).generator()
        env = realize_environment(config.interarrival(), config.delay_spec(), horizon=W, stream=s.child(1))
        win = sample_window(env, config.p, (W, Hw), "dilute", s.child(2))
        i, j = (int(x) for x in rng.integers(0, cells, size=2))
        R = dependency_rectangle(system, k, i, j)
        mask = np.zeros((Hw, W), dtype=bool)
        mask[R.c:R.d, R.a:R.b] = True
        before = all(cd_event(win, system, k, i, j))
        uh, uv = rng.random((Hw, W)), rng.random((Hw, W))
        outside = replace(win, h=np.where(mask, win.h, uh < win.ph[None, :]),
                          v=np.where(mask, win.v, uv < win.pv[None, :]))
        inside = replace(win, h=np.where(mask, uh < win.ph[None, :], win.h),
                         v=np.where(mask, uv < win.pv[None, :], win.v))
        flips += before != all(cd_event(outside, system, k, i, j))
        inside_changes += before != all(cd_event(inside, system, k, i, j))
    failures = [f"{flips} site flips under outside resampling"] if flips else []
    return {"k": k, "trials": trials, "flips": flips, "inside_changes": inside_changes,
            "failures": failures}


# --------------------------------------------------------------------------
# decoupling and p_k audit
# --------------------------------------------------------------------------

def audit_decoupling_and_pk(config: ExperimentConfig, kmax: int | None = None,
                            stream: Stream | None = None) -> dict:
    """c1 estimate, L0 largeness conditions and the p_k checks in one report.

    Parameter or L0 failures raise unless ``config.waive`` is set, in which
    case they are recorded in the report.
    """
    stream = stream or config.stream()
    kmax = config.kmax if kmax is None else kmax
    spec = config.interarrival()
    params = validate_params(config.eps, config.alpha, config.gamma, config.mu, config.beta,
                             waive=config.waive)
    eps = float(params.eps)
    alpha = float(params.alpha)
    seps = list(range(1, config.c1_separations + 1))
    c1 = estimate_c1(spec, eps, config.c1_m, seps, config.samples, stream.child(0))
    rho_m, rho_err = stationary_moment(spec, eps)
    l0 = validate_L0(params, config.L0, rho_m, c1.c_hat_upper)
    failures = []
    if not l0.ok:
        msg = f"L0 conditions: {l0}"
        if not config.waive:
            raise ConfigError(msg)
    system = ScaleSystem.build(config.L0, config.gamma, kmax, params=params, height_mode=config.height_mode,
                               h=config.h)
    pk = estimate_pk(spec, system, list(range(kmax + 1)), config.samples, stream.child(1),
                     c1_hat=c1.c_hat_upper)
    p0_exact = exact_p0(spec, config.L0)
    bound0 = config.L0 ** -alpha
    rows = []
    for e in pk:
        row = {"k": e.k, "n": e.n, "bad": e.bad, "p_hat": e.p_hat, "ci": (e.ci_lo, e.ci_hi),
               "bound": e.bound, "bound_ok": e.bound_ok, "recursion_rhs": e.recursion_rhs,
               "recursion_ok": e.recursion_ok, "resolved": e.resolved}
        if e.k >= 1:
            Lk = float(system.L[e.k - 1])
            g = float(params.gamma)
            comp = (1.0 + c1.c_hat_upper) * Lk ** (2 * g - 2 - 2 * alpha)
            row["induction_comparator"] = comp
            row["induction_ok"] = e.ci_lo <= comp
            if not row["induction_ok"]:
                failures.append(f"p_{e.k} lower CI {e.ci_lo:.4g} above (1+c1) L^(2g-2-2a) = {comp:.4g}")
            if e.recursion_ok is False and e.ci_lo > (e.recursion_rhs or 0.0):
                failures.append(f"p_{e.k} lower CI {e.ci_lo:.4g} above recursion bound {e.recursion_rhs:.4g}")
        rows.append(row)
    if p0_exact is not None and p0_exact > bound0:
        failures.append(f"exact p_0 = {p0_exact:.4g} > L0^-alpha = {bound0:.4g}")
    if pk[0].ci_lo > bound0:
        failures.append(f"p_0 lower CI {pk[0].ci_lo:.4g} > L0^-alpha = {bound0:.4g}")
    return {"params": params.as_floats(), "waived": list(params.waived), "L0": config.L0,
            "L0_checks": [{"name": c.name, "holds": c.holds, "lhs": c.lhs, "rhs": c.rhs} for c in l0.checks],
            "L0_ok": l0.ok, "minimal_L0": l0.minimal_L0, "rho_moment": rho_m, "rho_moment_error": rho_err,
            "c1_hat": c1.c_hat, "c1_upper": c1.c_hat_upper, "c1_exact": c1.c_hat_exact,
            "p0_exact": p0_exact, "p0_bound": bound0, "pk": rows, "L": system.L,
            "height_schedule": system.flag(), "failures": failures}


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

def _chunks(n: int, size: int):
    return [range(lo, min(n, lo + size)) for lo in range(0, n, size)]


def _run_unit(kind: str, config: ExperimentConfig, task_index: int, arg):
    """Execute one unit; module level so worker processes can import it."""
    base = Stream(config.seed, (task_index,))
    if kind == "sweep":
        si, reps = arg
        N = config.sizes[si]
        return [sweep_replica(config, N, base.child(si, r)) for r in reps]
    if kind == "heavytail":
        plan = HeavyTailPlan.from_eta(config.eta, config.i_min, config.cell_budget)
        spec = config.interarrival()
        nmax = max(config.sizes)
        return [heavy_replica(spec, plan, config.p, nmax, base.child(r), config.probe_budget) for r in arg]
    if kind == "certificate":
        system = certificate_system(config)
        return [certificate_replica(config, system, config.k0, config.K, base.child(0, r)) for r in arg]
    if kind == "qk":
        system = certificate_system(config)
        return _qk_unit(config, system, arg, base.child(1, arg))
    if kind == "audit":
        return audit_decoupling_and_pk(config, stream=base)
    raise ValueError(f"unknown unit kind {kind!r}")


def _plan_task(name: str, config: ExperimentConfig):
    """Units of a task, in merge order."""
    if name == "sweep":
        return [("sweep", (si, reps)) for si in range(len(config.sizes))
                for reps in _chunks(config.replicas, config.chunk)]
    if name == "heavytail":
        _check_heavy_tail(config.interarrival(), config.eta)
        return [("heavytail", reps) for reps in _chunks(config.replicas, config.chunk)]
    if name == "certificate":
        return ([("certificate", reps) for reps in _chunks(config.replicas, config.chunk)]
                + [("qk", k) for k in range(config.k0, config.K + 1)])
    if name == "audit":
        return [("audit", None)]
    raise ConfigError(f"unknown task {name!r}")


def _reduce_task(name: str, config: ExperimentConfig, task_index: int, units, outputs) -> dict:
    if name == "sweep":
        res = []
        for si, N in enumerate(config.sizes):
            curves = [c for (kind, (s, _)), out in zip(units, outputs) if s == si for c in out]
            rng = Stream(config.seed, (task_index, si, _BOOTSTRAP_ID)).generator()
            res.append(summarize_sweep(config, N, np.array(curves), rng))
        return {"sizes": res, "failures": [f for r in res for f in r["failures"]]}
    if name == "heavytail":
        plan = HeavyTailPlan.from_eta(config.eta, config.i_min, config.cell_budget)
        reps = [r for out in outputs for r in out]
        return summarize_heavy_tail(plan, config.p, sorted(config.sizes), reps)
    if name == "certificate":
        pairs = [pr for (kind, _), out in zip(units, outputs) if kind == "certificate" for pr in out]
        qk = {str(arg): out for (kind, arg), out in zip(units, outputs) if kind == "qk"}
        return summarize_certificate(certificate_system(config), config.k0, config.K, pairs, qk)
    if name == "audit":
        return outputs[0]
    raise ConfigError(f"unknown task {name!r}")


def execute_task(name: str, config: ExperimentConfig, task_index: int, workers: int = 1) -> dict:
    units = _plan_task(name, config)
    if workers > 1 and len(units) > 1:
        # forkserver: no inherited numba thread pools, and no re-import of __main__
        ctx = multiprocessing.get_context("forkserver")
        ctx.set_forkserver_preload(["stretchperc.experiments"])
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_run_unit, kind, config, task_index, arg) for kind, arg in units]
            outputs = [f.result() for f in futures]  # fixed merge order
    else:
        outputs = [_run_unit(kind, config, task_index, arg) for kind, arg in units]
    return _reduce_task(name, config, task_index, units, outputs)


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    results: list[dict] = field(default_factory=list)
    timestamps: list[dict] = field(default_factory=list)
    path: str | None = None

    @property
    def failures(self) -> list[str]:
        return [f"{r['task']}: {f}" for r in self.results for f in r["result"].get("failures", [])]

    @property
    def ok(self) -> bool:
        return not self.failures


def _header(config: ExperimentConfig) -> dict:
    return {"record": "header", "config_hash": config.config_hash(), "seed": config.seed,
            "tasks": list(config.tasks), "config": config.as_dict()}


def _read_existing(path: Path, header: dict) -> list[dict]:
    """Completed task lines of a previous run of the same config; drops a torn last line."""
    text = path.read_text()
    lines = text.split("\n")
    complete = lines[:-1]  # anything after the last newline is a partial write
    if not complete:
        return []
    first = json.loads(complete[0])
    if first.get("config_hash") != header["config_hash"]:
        raise ConfigError(f"{path} holds a run of config {first.get('config_hash')}, "
                          f"not {header['config_hash']}; choose another output path")
    done = [json.loads(ln) for ln in complete[1:] if ln]
    keep = "\n".join(complete) + "\n"
    if keep != text:
        path.write_text(keep)
    return done


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(config: ExperimentConfig, output=None, workers: int | None = None, resume: bool = True,
        stop_after: int | None = None) -> RunRecord:
    """Execute the configured tasks, appending one JSON line per finished task.

    The file starts with a header holding the config hash.  A rerun of the
    same config resumes after the last finished task.  Wall-clock timestamps
    go to a ``.log`` sidecar so the JSON-lines file depends only on the
    config.  ``stop_after`` ends the run after that many new tasks, which
    simulates an interruption.
    """
    path = Path(output or config.output)
    workers = config.workers if workers is None else int(workers)
    header = _header(config)
    done: list[dict] = []
    if path.exists() and resume and path.stat().st_size:
        done = _read_existing(path, header)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dumps(header) + "\n")
    record = RunRecord(header["config_hash"], config.seed, list(done), path=str(path))
    finished = {d["index"] for d in done}
    log = path.with_name(path.name + ".log")
    new = 0
    for t, name in enumerate(config.tasks):
        if t in finished:
            continue
        if stop_after is not None and new >= stop_after:
            break
        start = _now()
        result = execute_task(name, config, t, workers)
        line = {"record": "task", "index": t, "task": name, "seed_lineage": [config.seed, t],
                "result": result}
        text = _dumps(line)
        with open(path, "a") as fh:
            fh.write(text + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        stamp = {"task": name, "index": t, "start": start, "end": _now(), "workers": workers}
        with open(log, "a") as fh:
            fh.write(json.dumps(stamp) + "\n")
        record.results.append(json.loads(text))
        record.timestamps.append(stamp)
        new += 1
    return record


def read_record(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln]
    return lines[0], lines[1:]


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    elif isinstance(obj, list) and obj and all(isinstance(v, (dict, list)) for v in obj):
        for n, v in enumerate(obj):
            _flatten(f"{prefix}[{n}]", v, out)
    else:
        out.append((prefix, obj))


def write_summary_csv(record: RunRecord | str, path) -> None:
    """Plot-ready CSV with one (task, key, value) row per scalar of each result."""
    import csv

    results = record.results if isinstance(record, RunRecord) else read_record(record)[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "index", "key", "value"])
        for r in results:
            rows = []
            _flatten("", r["result"], rows)
            for key, val in rows:
                w.writerow([r["task"], r["index"], key, json.dumps(val) if isinstance(val, list) else val])

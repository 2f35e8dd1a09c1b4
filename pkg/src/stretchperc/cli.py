"""Command-line front end.

Every subcommand accepts ``--config FILE`` plus one flag per config key
(``--p-grid 0.4,0.5`` sets ``p_grid``); flags override the file.  Exit
codes: 0 success, 1 an invariant failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .experiments import (ConfigError, ExperimentConfig, apply_environment, run,
                          write_summary_csv)
from .multiscale import ParamError

SUBCOMMANDS = ("renewal", "scales", "label", "pk", "crossing", "qk", "dual", "sweep", "heavytail",
               "certificate", "run")

_HELP = {
    "renewal": "stationary delay pmf, trajectories, moments, coupling and decoupling",
    "scales": "scale ladder L_k and heights as CSV",
    "label": "good/bad block labels of a sampled environment",
    "pk": "Monte Carlo p_k with the L_k^-alpha bound",
    "crossing": "one crossing indicator (optionally with a witness path)",
    "qk": "worst sampled failure probability of the C/D events",
    "dual": "contraction, dual window and the blocking/semicircuit checks",
    "sweep": "crossing curve over p and a p_c estimate",
    "heavytail": "heavy-tail decay experiment and strip bound audit",
    "certificate": "ladder certificate soundness and product bound",
    "run": "every task listed in the config, as a resumable JSON-lines record",
}


class UsageError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(ExperimentConfig):
        p.add_argument(_flag(f.name), dest=f"cfg_{f.name}", metavar=f.name.upper(),
                       help=f"config key {f.name} (default {getattr(ExperimentConfig(), f.name)!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stretchperc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        _add_config_flags(p)
        p.add_argument("--out", help="output file (default: stdout or the config's output)")
        if name == "renewal":
            p.add_argument("action", choices=("pmf", "sample", "moment", "coupling", "decoupling"))
            p.add_argument("--horizon", type=int, default=20)
            p.add_argument("--cap", type=int, default=10**6)
        if name in ("crossing", "dual"):
            p.add_argument("--width", type=int, default=8)
            p.add_argument("--height", type=int, default=8)
        if name == "crossing":
            p.add_argument("--direction", choices=("h", "v"), default="h")
            p.add_argument("--witness", action="store_true")
        if name == "dual":
            p.add_argument("--radius", type=int, default=4)
        if name == "qk":
            p.add_argument("--k", type=int, default=0)
        if name == "run":
            p.add_argument("--fresh", action="store_true", help="overwrite instead of resuming")
            p.add_argument("--summary", help="also write a CSV summary here")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    cfg = apply_environment(cfg)
    over = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(ExperimentConfig)
            if getattr(args, f"cfg_{f.name}") is not None}
    return cfg.with_overrides(**over) if over else cfg


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _summary(line: str):
    print(line, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_renewal(cfg: ExperimentConfig, args) -> int:
    from .renewal import (check_moment, estimate_c1, is_aperiodic, sample_coupling_times, sample_renewal,
                          stationary_delay_pmf)
    spec = cfg.interarrival()
    if args.action == "pmf":
        res = stationary_delay_pmf(spec, cfg.kmax)
        rows = ["k,rho_k"] + [f"{k},{v!r}" for k, v in enumerate(res.pmf.tolist())]
        _emit("\n".join(rows) + "\n", args.out)
        _summary(f"renewal pmf: {spec}, k=0..{cfg.kmax}, tail beyond {res.tail:.6g}")
        return 0
    if args.action == "sample":
        tr = sample_renewal(spec, cfg.delay_spec(), args.horizon, cfg.stream())
        tr.check()
        rec = {"arrivals": tr.arrivals.tolist(), "Y": tr.indicator.tolist(), "Z": tr.forward.tolist()}
        _emit(json.dumps(rec) + "\n", args.out)
        _summary(f"renewal sample: {len(tr.arrivals)} arrivals up to {args.horizon}")
        return 0
    if args.action == "moment":
        m = check_moment(spec, cfg.eta)
        _emit(json.dumps({"eta": cfg.eta, "finite": m.finite, "value": m.value, "error": m.error}) + "\n",
              args.out)
        _summary(f"renewal moment: E(xi^{cfg.eta}) {'finite' if m.finite else 'infinite'}")
        return 0
    if args.action == "coupling":
        ok, period = is_aperiodic(spec)
        if not ok:
            raise UsageError(f"coupling needs an aperiodic law; {spec} has period {period}")
        from .renewal import Dirac, Stationary
        T = sample_coupling_times(spec, Dirac(0), Stationary(), args.cap, cfg.samples, cfg.stream())
        done = T[T >= 0].astype(float)
        mean = float(done.mean()) if done.size else float("nan")
        se = float(done.std(ddof=1) / np.sqrt(done.size)) if done.size > 1 else float("nan")
        _emit(json.dumps({"samples": int(T.size), "censored": int(np.sum(T < 0)), "mean": mean,
                          "se": se}) + "\n", args.out)
        _summary(f"renewal coupling: E T ~ {mean:.4g} +- {se:.2g}")
        return 0
    rep = estimate_c1(spec, float(cfg.eps), cfg.c1_m, range(1, cfg.c1_separations + 1), cfg.samples,
                      cfg.stream())
    _emit("".join(e.to_json() + "\n" for e in rep.estimates), args.out)
    _summary(f"renewal decoupling: c1_hat={rep.c_hat:.4g} (upper {rep.c_hat_upper:.4g})")
    return 0


def _system(cfg: ExperimentConfig, params=None):
    from .multiscale import ScaleSystem
    return ScaleSystem.build(cfg.L0, cfg.gamma, cfg.kmax, params=params, height_mode=cfg.height_mode,
                             h=cfg.h, mu=cfg.mu if cfg.height_mode == "exact_log" else None)


def cmd_scales(cfg: ExperimentConfig, args) -> int:
    from .multiscale import write_scale_report
    system = _system(cfg)
    out = args.out
    if out:
        write_scale_report(out, system)
    else:
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            tmp = Path(d) / "scales.csv"
            write_scale_report(tmp, system)
            sys.stdout.write(tmp.read_text())
    _summary(f"scales: L={system.L} ({system.flag()} heights)")
    return 0


def cmd_label(cfg: ExperimentConfig, args) -> int:
    from .multiscale import label_blocks
    from .percolation import realize_environment
    system = _system(cfg)
    need = 2 * system.L[cfg.kmax]
    env = realize_environment(cfg.interarrival(), cfg.delay_spec(), horizon=need, stream=cfg.stream())
    grid = label_blocks(env, system, extent=need)
    _emit(grid.dump(), args.out)
    bad = grid.violations()
    _summary(f"label: {sum(int((~g).sum()) for g in grid.good)} bad blocks, {len(bad)} violations")
    return 1 if bad else 0


def cmd_pk(cfg: ExperimentConfig, args) -> int:
    from .multiscale import estimate_pk, validate_params, write_scale_report
    params = validate_params(cfg.eps, cfg.alpha, cfg.gamma, cfg.mu, cfg.beta, waive=cfg.waive)
    system = _system(cfg, params)
    est = estimate_pk(cfg.interarrival(), system, list(range(cfg.kmax + 1)), cfg.samples, cfg.stream())
    if args.out:
        write_scale_report(args.out, system, est)
    for e in est:
        print(e.describe())
    _summary(f"pk: {sum(e.bound_ok for e in est)}/{len(est)} upper CIs below L_k^-alpha"
             + (f" (waived: {'; '.join(params.waived)})" if params.waived else ""))
    return 0


def cmd_crossing(cfg: ExperimentConfig, args) -> int:
    from .percolation import Rectangle, crossing, realize_environment, sample_window
    spec = cfg.interarrival()
    if cfg.formulation == "dilute":
        env = realize_environment(spec, cfg.delay_spec(), horizon=args.width, stream=cfg.stream().child(0))
    else:
        env = realize_environment(spec, cfg.delay_spec(), ncolumns=args.width, stream=cfg.stream().child(0))
    kappa = None
    if cfg.formulation == "contracted":
        from .duality import choose_kappa
        kappa = choose_kappa(spec)
    win = sample_window(env, cfg.p, (args.width, args.height), cfg.formulation, cfg.stream().child(1), kappa)
    rep = crossing(win, Rectangle(0, args.width, 0, args.height), args.direction, witness=args.witness)
    rec = json.loads(rep.to_json())
    if rep.witness is not None:
        rec["witness"] = [list(v) for v in rep.witness]
    _emit(json.dumps(rec) + "\n", args.out)
    _summary(f"crossing: C_{args.direction} of {args.width}x{args.height} = {int(rep.indicator)}")
    return 0


def cmd_qk(cfg: ExperimentConfig, args) -> int:
    from .percolation import estimate_qk
    system = _system(cfg)
    est = estimate_qk(cfg.interarrival(), system, cfg.p, args.k, cfg.qk_envs, cfg.qk_configs, cfg.stream())
    rec = {"k": est.k, "p": est.p, "q_hat": est.q_hat, "C_fail": est.worst_C_fail, "C_ci": est.worst_C_ci,
           "D_fail": est.worst_D_fail, "D_ci": est.worst_D_ci, "rejections": est.rejections,
           "note": est.lower_bound_note, "height_schedule": system.flag()}
    _emit(json.dumps(rec) + "\n", args.out)
    _summary(f"qk: k={est.k} q_hat={est.q_hat:.4g}")
    return 0


def cmd_dual(cfg: ExperimentConfig, args) -> int:
    from .duality import (choose_kappa, contract, dualize, enhance_window, homomorphism_violations,
                          contract_window, origin_reaches, semicircuit_probe)
    from .percolation import realize_environment, sample_window
    spec = cfg.interarrival()
    kappa = choose_kappa(spec)
    s = cfg.stream()
    env = realize_environment(spec, cfg.delay_spec(), ncolumns=4 * args.width + 16, stream=s.child(0))
    primal = sample_window(env, cfg.p, (4 * args.width + 16, args.height), "inhomogeneous", s.child(1))
    con = contract(env, kappa)
    enh = enhance_window(primal, kappa)
    cwin = contract_window(enh, con)
    hom = homomorphism_violations(enh, cwin, con)
    W = min(args.width, cwin.width)
    small = sample_window(con.Xi, cfg.p, (W, args.height), "contracted", s.child(2), kappa)
    dual = dualize(small, con, s.child(3))
    r = min(args.radius, W, args.height)
    semi = semicircuit_probe(dual, r)
    reach = origin_reaches(small, r)
    failures = []
    if hom:
        failures.append(f"{hom} enhanced edges not mapped into contracted components")
    if not dual.complement_ok():
        failures.append("dual edges are not complements of primal edges")
    if semi == reach:
        failures.append(f"semicircuit={semi} and origin-reaches={reach} at r={r}")
    if args.out:
        Path(args.out).write_text(dual.dump())
    print(json.dumps({"kappa": kappa, "zeta": con.zeta[:W].tolist(), "p_star": dual.p_star,
                      "semicircuit": semi, "origin_reaches": reach, "homomorphism_violations": hom}))
    _summary(f"dual: kappa={kappa}, r={r}, semicircuit={semi}, {len(failures)} invariant failures")
    return 1 if failures else 0


def cmd_task(cfg: ExperimentConfig, args, tasks, fresh=False, summary=None) -> int:
    cfg = cfg.with_overrides(tasks=list(tasks))
    rec = run(cfg, output=args.out or cfg.output, resume=not fresh)
    if summary:
        write_summary_csv(rec, summary)
    for r in rec.results:
        res = r["result"]
        nf = len(res.get("failures", []))
        _summary(f"{r['task']}: {'ok' if not nf else f'{nf} invariant failures'} -> {rec.path}")
    for f in rec.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return 0 if rec.ok else 1


def dispatch(args) -> int:
    cfg = config_from_args(args)
    name = args.command
    if name in ("sweep", "heavytail", "certificate"):
        return cmd_task(cfg, args, [name], fresh=True)
    if name == "run":
        if not cfg.tasks:
            _summary("run: empty task list, writing the header only")
        return cmd_task(cfg, args, cfg.tasks, fresh=args.fresh, summary=args.summary)
    return globals()[f"cmd_{name}"](cfg, args)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return dispatch(args)
    except AssertionError as exc:  # includes InvariantError
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ConfigError, ParamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``mfhjb <command> [options]``.

Commands: ``solve``, ``convergence``, ``mfc-verify``, ``isaacs``, ``metrics``.
Exit codes: 0 success, 2 config error, 3 resource error, 4 failed check
(only with ``--check``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_value
from .errors import ConfigError, InvalidInputError, ResourceError, UnsupportedOperationError
from .hamiltonians import declared_rstar, estimate_constants, probe_set
from .lift import CSV_COLUMNS, convergence_table, default_measure_set
from .measures import (
    SobolevParams,
    c_neg_k_gap,
    d1,
    empirical_coeffs,
    h_neg_k_norm,
    read_measure_csv,
)
from .problems import Problem, closed_form
from .report import RunReport, write_csv
from .solver import (
    derivative_sup_norms,
    extract_policy,
    node_positions,
    solve_hjbn,
    solve_hjbz,
    write_snapshots,
)
from .torus import interpolate
from .verify import SimConfig, anti_policy, default_alternatives, simulate_cost, suboptimality_probe

log = logging.getLogger("mfhjb")

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_CHECK = 0, 2, 3, 4

# sup-norm tolerances of the solve-time oracle checks
ORACLE_TOL = {"heat-linear-G": 5e-3, "colehopf": 1e-2}


def _solve(cfg: ExperimentConfig, problem: Problem, H=None, keep_all: bool | None = None):
    sc = cfg.solver_config(problem)
    if keep_all is not None:
        sc.keep_all = keep_all
    solver = solve_hjbz if sc.grid.has_z else solve_hjbn
    return solver(H or problem.H, problem.G, sc, seed=cfg.seed, workers=cfg.workers)


def _finish(report: RunReport, out: Path, check: bool) -> int:
    report.write(out / "report.json")
    for c in report.checks:
        print(c.line())
    if check and not report.passed:
        return EXIT_CHECK
    return EXIT_OK


# ------------------------------------------------------------------ commands

def cmd_solve(cfg: ExperimentConfig, check: bool = False) -> int:
    """Solve the N-particle equation, write snapshot dumps and a summary."""
    problem = cfg.validate("solve")
    out = Path(cfg.out)
    report = RunReport(config=cfg.as_dict())
    with report.timed("solve"):
        traj = _solve(cfg, problem)
    paths = write_snapshots(traj, out, cfg.seed)
    V0 = traj.snapshots[-1]
    norms = derivative_sup_norms(traj, traj.times[-1], 1)
    summary = {
        "snapshots": len(paths), "dt": traj.config.dt, "theta": traj.config.theta,
        "p_clip": traj.config.p_clip, "sup": float(V0.values.max()), "inf": float(V0.values.min()),
        "N*|D1|": norms["scaled"][0],
    }
    report.stages["solve"] = summary
    print(f"{problem.name}: N={traj.config.grid.N} M={traj.config.grid.M} steps={traj.config.n_steps} "
          f"dt={traj.config.dt:.4g} theta={traj.config.theta:.4g}")
    print(f"  V(t0): sup={summary['sup']:.6g} inf={summary['inf']:.6g}  N*max|D V|={summary['N*|D1|']:.6g}")
    print(f"  wrote {len(paths)} snapshots to {out}")
    rstar = declared_rstar(problem.H, problem.G, problem.T)
    if rstar is not None:
        report.check("lipschitz-vs-declared-R*", max(d["lip"] for d in traj.diagnostics) if traj.diagnostics
                     else summary["N*|D1|"], 1.1 * rstar)
    if problem.name in ORACLE_TOL and not traj.config.grid.has_z:
        try:
            exact = closed_form(problem, node_positions(traj.config.grid), traj.times[-1]).reshape(V0.values.shape)
        except UnsupportedOperationError:
            exact = None
        if exact is not None:
            report.check("oracle-sup-error", float(np.max(np.abs(V0.values - exact))), ORACLE_TOL[problem.name])
    return _finish(report, out, check)


def cmd_convergence(cfg: ExperimentConfig, check: bool = False) -> int:
    """Solve for each N in the lift list and tabulate Vhat^N on a shared measure set."""
    problem = cfg.validate("convergence")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lift = cfg.lift
    Ns = [int(n) for n in np.atleast_1d(lift.get("N_list", (1, 2, 3)))]
    t_list = [float(t) for t in np.atleast_1d(lift.get("t_list", 0.0))]
    M = int(lift.get("M", cfg.solver.get("M", 32)))
    measures = default_measure_set(problem.d, M, int(lift.get("seed_measures", cfg.seed)))
    report = RunReport(config=cfg.as_dict())
    overrides = {k: cfg.solver[k] for k in ("theta", "p_clip", "cfl_safety", "symbol") if k in cfg.solver}
    convergence_table(
        problem.H, problem.G, Ns, t_list, measures, problem.T, problem.a0, M=M, d=problem.d,
        method=str(lift.get("method", "exact")), seed=cfg.seed, samples=int(lift.get("samples", 100_000)),
        lip_pairs=int(lift.get("lip_pairs", 60)), k_max=int(lift.get("k_max", 2)),
        budget_bytes=cfg.budget_bytes, skip_resource_errors=True, workers=cfg.workers, report=report,
        solver_overrides=overrides,
    )
    stage = report.stages["convergence"]
    write_csv(out / "convergence.csv", stage["rows"], CSV_COLUMNS)
    consts = estimate_constants(problem.H, problem.G, P=1000, seed=cfg.seed, T=problem.T)
    stage["constants"] = {"C_H": consts.C_H, "C_G": consts.C_G, "R_star": consts.R_star}
    gaps = [stage["gaps"][str(n)] for n in stage["solved_N"][:-1]]
    for n in stage["solved_N"][:-1]:
        print(f"  gap N={n}: {stage['gaps'][str(n)]:.6g}")
    if len(gaps) >= 2:
        report.check("gap-trend (last <= first)", gaps[-1], gaps[0])
    lips = [v["d1_lip"] for v in stage["per_N"].values()]
    if lips:
        report.check("d1-lip common bound", max(lips), 1.1 * consts.R_star)
    for e in report.errors:
        print(f"  resource: {e}", file=sys.stderr)
    code = _finish(report, out, check)
    return EXIT_RESOURCE if report.errors and code == EXIT_OK else code


def _x0(cfg: ExperimentConfig, N: int, d: int) -> np.ndarray:
    raw = cfg.verify.get("x0")
    if raw is None:
        return ((np.arange(N) + 0.5) / N)[:, None] * np.ones((1, d))
    x0 = np.asarray(np.atleast_1d(raw), dtype=float)
    if x0.size != N * d:
        raise ConfigError(f"verify: x0 needs N*d = {N * d} values, got {x0.size}")
    return x0.reshape(N, d)


def cmd_mfc_verify(cfg: ExperimentConfig, check: bool = False) -> int:
    """Check the solved value against Monte-Carlo costs of the extracted and alternative policies."""
    problem = cfg.validate("mfc-verify")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=cfg.as_dict())
    with report.timed("solve"):
        traj = _solve(cfg, problem, keep_all=True)
    g = traj.config.grid
    ver = cfg.verify
    t0 = float(ver.get("t0", 0.0))
    tol = float(ver.get("tolerance", 2e-2))
    sigmas = float(ver.get("sigmas", 4.0))
    x0 = _x0(cfg, g.N, g.d)
    ref = float(np.asarray(interpolate(traj.at(t0), x0.reshape(1, -1))).ravel()[0])
    sim = SimConfig(N=g.N, d=g.d, T=problem.T, t0=t0, a0=problem.a0, dt_sim=float(ver.get("dt_sim", 1e-3)),
                    paths=int(ver.get("paths", 10_000)), seed=cfg.seed, x0=x0)
    ctrl = problem.control
    policy = extract_policy(traj, problem.H)
    with report.timed("simulate"):
        est = simulate_cost(ctrl.b, ctrl.L, problem.G, policy, sim)
    alts = default_alternatives(g.d, g.N)
    alts["anti"] = anti_policy(ctrl, policy.momenta)
    with report.timed("probe"):
        probe = suboptimality_probe(ctrl.b, ctrl.L, problem.G, ref, alts, sim, tol, sigmas)
    probe.write_csv(out / "probe.csv")
    report.stages["mfc-verify"] = {
        "reference": ref, "mc_mean": est.mean, "mc_stderr": est.stderr, "paths": est.paths,
        "probe": [r.__dict__ for r in probe.rows],
    }
    print(f"V^N(t0,x0) = {ref:.6g}; MC = {est.mean:.6g} +- {est.stderr:.3g}")
    report.check("optimal policy |MC - V|", abs(est.mean - ref), sigmas * est.stderr + tol)
    for r in probe.rows:
        if r.policy_id == "anti":
            report.check("anti policy margin", r.margin, sigmas * r.stderr, ">")
        else:
            report.check(f"margin {r.policy_id}", r.margin, -(sigmas * r.stderr + tol), ">=")
    return _finish(report, out, check)


def cmd_isaacs(cfg: ExperimentConfig, check: bool = False) -> int:
    """Solve the lower and upper game equations and compare them."""
    problem = cfg.validate("isaacs")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=cfg.as_dict())
    hm, hp = problem.H, problem.H_upper
    gaps = []
    for x, _, p, _, m, _ in probe_set(500, problem.d, 4.0, cfg.seed):
        gaps.append(hm.evaluate(x, p, m) - hp.evaluate(x, p, m))
    gaps = np.asarray(gaps)
    with report.timed("solve-lower"):
        lo = _solve(cfg, problem, hm)
    with report.timed("solve-upper"):
        up = _solve(cfg, problem, hp)
    diff = [u.values - v.values for u, v in zip(up.snapshots, lo.snapshots)]
    sup_diff = max(float(np.max(np.abs(x))) for x in diff)
    ordering = max(float(np.max(-x)) for x in diff)  # > 0 where V- exceeds V+
    write_snapshots(lo, out, cfg.seed, stem="Vlower")
    write_snapshots(up, out, cfg.seed, stem="Vupper")
    report.stages["isaacs"] = {
        "H_gap_max": float(gaps.max()), "H_gap_min": float(gaps.min()),
        "sup|V+ - V-|": sup_diff, "max(V- - V+)": ordering,
    }
    print(f"H- - H+ on probes: max={gaps.max():.6g} min={gaps.min():.6g}")
    print(f"sup|V+ - V-| = {sup_diff:.6g}; max(V- - V+) = {ordering:.3g}")
    report.check("Hamiltonian ordering min(H- - H+)", float(gaps.min()), -1e-12, ">=")
    report.check("value ordering max(V- - V+)", ordering, 1e-12)
    if gaps.max() <= 1e-12:
        report.check("Isaacs sup|V+ - V-|", sup_diff, float(cfg.verify.get("tolerance", 2e-2)))
    else:
        report.check("H-gap on probes", float(gaps.max()), 0.0, ">")
    return _finish(report, out, check)


def cmd_metrics(files: list[str], k: int, max_mode: int, size: int) -> int:
    """Print d1, H^-k and the C^-k surrogate between two measure files."""
    mu, nu = (read_measure_csv(f) for f in files)
    if mu.d != nu.d:
        raise InvalidInputError(f"dimension mismatch: {mu.d} vs {nu.d}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = SobolevParams(k, max_mode, mu.d)
    q = empirical_coeffs(mu, max_mode) - empirical_coeffs(nu, max_mode)
    hk, tail = h_neg_k_norm(q, params)
    print(f"d1 = {d1(mu, nu)!r}")
    print(f"h_neg_k = {hk!r} (k={k}, max_mode={max_mode}, tail <= {tail:.3g})")
    print(f"c_neg_k_surrogate = {c_neg_k_gap(mu, nu, k, size)!r} (dictionary size {size})")
    return EXIT_OK


# ------------------------------------------------------------------ argparse

COMMANDS = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "mfc-verify": cmd_mfc_verify,
    "isaacs": cmd_isaacs,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("expected an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--seed", type=_u64, help="master seed (overrides [run] seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    common.add_argument("--budget-bytes", type=_u64, help="memory budget for grids")
    common.add_argument("--threads", type=int, help="FFT worker threads, 0 = auto")
    common.add_argument("--check", action="store_true", help="exit 4 when an acceptance check fails")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mfhjb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
    met = sub.add_parser("metrics", parents=[common], help="distances between two measure files")
    met.add_argument("files", nargs=2, help="CSV files with rows w,x1,...,xd")
    met.add_argument("--k", type=int, default=3)
    met.add_argument("--max-mode", type=int, default=16)
    met.add_argument("--size", type=int, default=16, help="C^-k test dictionary size")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"bad --set {item!r}; expected SECTION.KEY=VALUE")
        val = parse_value(value)
        if section == "problem":
            if name == "name":
                cfg.problem = str(val)
            else:
                cfg.problem_params[name] = val
        elif section in ("solver", "metrics", "lift", "verify"):
            getattr(cfg, section)[name] = val
        elif section == "run" and name in ("out", "seed", "budget_bytes", "threads"):
            setattr(cfg, name, str(val) if name == "out" else int(val))
        else:
            raise ConfigError(f"bad --set key {key!r}")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    if args.budget_bytes is not None:
        cfg.budget_bytes = args.budget_bytes
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "metrics":
            return cmd_metrics(args.files, args.k, args.max_mode, args.size)
        if args.config is None:
            if not args.set:
                raise ConfigError("--config is required (or give --set problem.name=...)")
            cfg = ExperimentConfig(problem="")
        else:
            cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, check=args.check)
    except (ConfigError, InvalidInputError, UnsupportedOperationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

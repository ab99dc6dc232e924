"""Command line entry point.

Subcommands: ``solve-inner``, ``optimize``, ``batch``, ``validate``,
``export-traj`` and ``gen-path``. Flags override scenario fields. The exit
status is 0 only when the produced result is feasible under the per-point
error cap (and, where a trajectory is involved, within the joint limits).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import default_out_dir, run_batch
from .inner import InfeasibleError
from .outer import evaluate
from .scenario import (EdgeCurve, InitError, ScenarioError, build_problem, generate_edge_path,
                       load_scenario, random_free_variable_init)
from .trajectory import (reconstruct_timing, sample_trajectory, validate_limits,
                         write_timing_json, write_trajectory_csv)

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2

_OVERRIDES = {
    "N": int, "seed": int, "cap": float, "eps": float, "extension": float,
    "alpha": float, "beta": float, "max_iters": int, "window": int, "tol": float,
    "fixed_lambda": float,
}


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or key not in _OVERRIDES:
            raise ScenarioError(f"--set {item!r}: expected one of {sorted(_OVERRIDES)} as key=value")
        out[key] = _OVERRIDES[key](value)
    return out


def _scenario(args):
    sc = load_scenario(args.scenario)
    kw = _parse_set(getattr(args, "set", None))
    for name in ("N", "alpha", "beta"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "iterations", None) is not None:
        kw["max_iters"] = args.iterations
    if getattr(args, "mode", None):
        kw["mode"] = args.mode.replace("-", "_")
    if "window" in kw:
        kw["window"] = kw["window"] or None
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return sc.with_overrides(**kw) if kw else sc


def _out(args) -> Path:
    out = Path(args.out) if args.out else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve_inner(args) -> int:
    sc = _scenario(args)
    problem = build_problem(sc)
    draw = random_free_variable_init(sc, problem, sc.seed)
    ev = evaluate(problem, draw.theta, sc.optimizer.mode)
    sol = ev.inner
    doc = {
        "mode": sc.optimizer.mode, "seed": sc.seed, "free_variable": draw.free_variable,
        "V": sol.value, "t_f": sol.t_f, "unbounded": sol.unbounded,
        "kkt_residual": sol.kkt_residual, "iterations": sol.iterations,
        "active": [list(a) for a in sol.active], "s2": sol.s2.tolist(),
        "max_core_error": ev.max_core_error.tolist(), "feasible": ev.feasible,
    }
    (_out(args) / "inner.json").write_text(json.dumps(doc, indent=1))
    print(f"V = {sol.value:.9g}  t_f = {sol.t_f:.6f} s  active = {len(sol.active)}  "
          f"max core error = {ev.max_core_error.max() * 1e3:.3f} mm")
    return EXIT_OK if ev.feasible else EXIT_INFEASIBLE


def _print_rows(results):
    for r in results:
        m = r.metrics
        if r.report is None:
            print(f"run {m['run']} seed {m['seed']}: {m['termination']}")
            continue
        print(f"run {m['run']} seed {m['seed']}: t_f {m['initial_t_f']:.4f} -> {m['final_t_f']:.4f} s "
              f"({m['improvement'] * 100:.1f}%), max core error {m['max_core_error'] * 1e3:.2f} mm, "
              f"{'feasible' if m['feasible'] else 'INFEASIBLE'}, {r.report.wall_clock:.1f} s")


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    results, _ = run_batch(sc, 1, _out(args), seeds=[sc.seed])
    _print_rows(results)
    return EXIT_OK if results[0].ok and results[0].metrics["limits_ok"] else EXIT_INFEASIBLE


def cmd_batch(args) -> int:
    sc = _scenario(args)
    results, summary = run_batch(sc, args.runs, _out(args), workers=args.workers)
    _print_rows(results)
    imp = summary["improvement"]
    err = summary["max_core_error"]
    print(f"improvement {imp['mean'] * 100:.2f} +- {imp['std'] * 100:.2f} %, "
          f"max core error {err['mean'] * 1e3:.2f} +- {err['std'] * 1e3:.2f} mm, "
          f"{summary['feasible']}/{summary['runs']} feasible")
    ok = all(r.ok and r.metrics["limits_ok"] for r in results)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def _theta_from_report(path, run: int):
    doc = json.loads(Path(path).read_text())
    for r in doc["runs"]:
        if r["run"] == run and "theta_final" in r:
            return np.array(r["theta_final"], dtype=float)
    raise ScenarioError(f"{path}: no final parameters for run {run}")


def _theta_for(args, sc, problem):
    if args.report:
        return _theta_from_report(args.report, args.run)
    return random_free_variable_init(sc, problem, sc.seed).theta


def cmd_validate(args) -> int:
    sc = _scenario(args)
    problem = build_problem(sc)
    print(f"scenario {sc.name}: n={sc.n}, N={problem.table.N}, d={sc.basis.d}, "
          f"core points={int(problem.path.core.sum())}, mode={sc.optimizer.mode}")
    if not (args.report or args.check_init):
        return EXIT_OK
    theta = _theta_for(args, sc, problem)
    ev = evaluate(problem, theta, sc.optimizer.mode)
    rep = validate_limits(theta, problem.table, ev.inner.s2, sc.limits)
    print(f"t_f = {ev.inner.t_f:.6f} s, max core error = {ev.max_core_error.max() * 1e3:.3f} mm "
          f"(cap {sc.cap * 1e3:.1f} mm), worst relative limit violation = {rep.worst:.3e}")
    return EXIT_OK if ev.feasible and rep.ok else EXIT_INFEASIBLE


def cmd_export_traj(args) -> int:
    sc = _scenario(args)
    problem = build_problem(sc)
    theta = _theta_for(args, sc, problem)
    ev = evaluate(problem, theta, sc.optimizer.mode)
    timing = reconstruct_timing(ev.inner.s2, problem.table.grid)
    times, Q = sample_trajectory(theta, problem.table.spec, timing, problem.table.grid, args.dt)
    out = _out(args)
    write_trajectory_csv(out / f"traj_{args.run}.csv", times, Q)
    write_timing_json(out / f"traj_{args.run}_timing.json", timing, problem.table.grid)
    rep = validate_limits(theta, problem.table, ev.inner.s2, sc.limits)
    print(f"wrote {times.size} samples over {timing.t_f:.6f} s to {out}")
    return EXIT_OK if ev.feasible and rep.ok else EXIT_INFEASIBLE


def cmd_gen_path(args) -> int:
    cp = EdgeCurve() if args.control_points is None else EdgeCurve(
        tuple(zip(args.control_points[0::2], args.control_points[1::2])))
    pts = generate_edge_path(cp, args.points)
    out = Path(args.out) if args.out else default_out_dir() / "path.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, pts, delimiter=",", fmt="%.12g")
    print(f"wrote {pts.shape[0]} points to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bilevel-topp",
                                description="Time-optimal joint curves for redundant arms on a fixed path.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, traj=False):
        sp.add_argument("scenario", help="TOML scenario file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=("general", "const-speed", "no-acc"))
        sp.add_argument("--out", help="output directory (default: $BILEVEL_TOPP_OUT or ./bilevel_topp_out)")
        sp.add_argument("--N", type=int, help="grid segments including the extension")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help=f"override a scenario field ({', '.join(sorted(_OVERRIDES))})")
        if traj:
            sp.add_argument("--report", help="report.json whose final parameters to use")
            sp.add_argument("--run", type=int, default=0)

    sp = sub.add_parser("solve-inner", help="solve the inner problem at a seeded initial curve")
    common(sp)
    sp.set_defaults(func=cmd_solve_inner)

    sp = sub.add_parser("optimize", help="one seeded optimization run")
    common(sp)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("batch", help="several seeded runs with metrics and plot data")
    common(sp)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("validate", help="check a scenario and optionally a result against it")
    common(sp, traj=True)
    sp.add_argument("--check-init", action="store_true", help="validate the seeded initial curve")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("export-traj", help="time-sampled joint trajectory CSV and timing JSON")
    common(sp, traj=True)
    sp.add_argument("--dt", type=float, default=0.002)
    sp.set_defaults(func=cmd_export_traj)

    sp = sub.add_parser("gen-path", help="write the built-in edge curve as CSV")
    sp.add_argument("--points", type=int, default=501)
    sp.add_argument("--control-points", type=float, nargs=8, metavar="XY")
    sp.add_argument("--out", help="output CSV file")
    sp.set_defaults(func=cmd_gen_path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InitError, InfeasibleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ScenarioError) else EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

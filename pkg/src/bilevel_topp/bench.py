"""Seeded single runs and batches with metrics, reports and plot data.

Output layout of a batch directory::

    metrics.csv          one row per run plus mean and std rows
    report.json          configuration, per-run histories, timings, summary
    traj_<k>.csv         time-sampled joint trajectory of run k
    traj_<k>_timing.json timing law of run k
    plots/tf_history_<k>.csv, plots/error_profile_<k>.csv,
    plots/path_overlay_<k>.csv, plots/speed_profile_<k>.csv

``metrics.csv`` holds only deterministic quantities, so identical scenarios
and seeds reproduce it byte for byte; wall-clock times live in the report.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .inner import InfeasibleError
from .outer import OptimizationError, OptimizationReport, OuterProblem, optimize
from .scenario import InitError, Scenario, build_problem, random_free_variable_init
from .trajectory import (reconstruct_timing, sample_trajectory, traversal_time,
                         validate_limits, write_timing_json, write_trajectory_csv)

__all__ = [
    "METRIC_COLUMNS",
    "PLOT_HEADERS",
    "RunResult",
    "run_single",
    "run_batch",
    "default_out_dir",
    "write_run_outputs",
    "summarize",
]

OUT_ENV = "BILEVEL_TOPP_OUT"

METRIC_COLUMNS = (
    "scenario", "run", "seed", "free_variable", "mode", "initial_t_f", "final_t_f",
    "improvement", "initial_max_error", "max_core_error", "feasible", "limits_ok",
    "iterations", "best_iter", "termination",
)

PLOT_HEADERS = {
    "tf_history": ("iteration", "t_f", "E", "max_core_error", "lambda_norm"),
    "error_profile": ("s", "core", "error_initial", "error_final"),
    "path_overlay": ("s", "core", "x_desired", "y_desired", "x_initial", "y_initial",
                     "x_final", "y_final"),
    "speed_profile": ("s", "sdot_initial", "sdot_final"),
}


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "bilevel_topp_out"))


@dataclass
class RunResult:
    """Outcome of one seeded run; ``report`` is None when the run failed."""

    index: int
    seed: int
    metrics: dict
    report: OptimizationReport | None
    free_variable: float | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None and bool(self.metrics["feasible"])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def run_single(sc: Scenario, seed: int, index: int = 0,
               problem: OuterProblem | None = None) -> RunResult:
    """Seeded initial curve followed by the primal-dual optimizer."""
    problem = problem or build_problem(sc)
    row = dict.fromkeys(METRIC_COLUMNS, "")
    row.update(scenario=sc.name, run=index, seed=seed, mode=sc.optimizer.mode)
    try:
        draw = random_free_variable_init(sc, problem, seed)
        row["free_variable"] = "" if draw.free_variable is None else draw.free_variable
        report = optimize(problem, draw.theta, sc.optimizer)
    except (InitError, OptimizationError, InfeasibleError) as exc:
        row.update(feasible=False, limits_ok=False, termination=f"failed: {exc}")
        return RunResult(index, seed, row, None, None, str(exc))
    lim = _limits_ok(report, problem)
    row.update(
        initial_t_f=report.initial_t_f, final_t_f=report.t_f, improvement=report.improvement,
        initial_max_error=float(report.initial.max_core_error.max()),
        max_core_error=float(report.best.max_core_error.max()),
        feasible=report.feasible, limits_ok=lim, iterations=report.iterations,
        best_iter=report.best_iter, termination=report.termination,
    )
    return RunResult(index, seed, row, report, draw.free_variable)


def _limits_ok(report: OptimizationReport, problem: OuterProblem) -> bool:
    s2 = report.best.inner.s2
    if not np.all(np.isfinite(s2)):
        return False
    return validate_limits(report.theta, problem.table, s2, problem.limits).ok


def _run_job(args):
    sc, seed, index = args
    return run_single(sc, seed, index)


def summarize(rows: list[dict]) -> dict:
    """Mean and population std of the numeric metrics over successful runs."""
    keys = ("initial_t_f", "final_t_f", "improvement", "max_core_error")
    good = [r for r in rows if r["final_t_f"] != ""]
    out = {"runs": len(rows), "succeeded": len(good),
           "feasible": sum(bool(r["feasible"]) for r in rows)}
    for k in keys:
        vals = np.array([float(r[k]) for r in good])
        out[k] = {"mean": float(vals.mean()) if vals.size else math.nan,
                  "std": float(vals.std()) if vals.size else math.nan}
    return out


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_run_outputs(out: Path, result: RunResult, problem: OuterProblem,
                      dt: float = 0.002) -> dict:
    """Trajectory, timing law and plot-data files for one successful run."""
    rep, k = result.report, result.index
    table, path = problem.table, problem.path
    s = table.grid.s
    timing = reconstruct_timing(rep.best.inner.s2, table.grid)
    times, Q = sample_trajectory(rep.theta, table.spec, timing, table.grid, dt)
    write_trajectory_csv(out / f"traj_{k}.csv", times, Q)
    write_timing_json(out / f"traj_{k}_timing.json", timing, table.grid)

    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    h = rep.history
    name = problem.channel_names[0]
    _write_csv(plots / f"tf_history_{k}.csv", PLOT_HEADERS["tf_history"],
               zip(range(len(h["t_f"])), h["t_f"], h[f"E_{name}"], h[f"max_err_{name}"],
                   h["lam_norm"]))
    core = path.core.astype(int)
    _write_csv(plots / f"error_profile_{k}.csv", PLOT_HEADERS["error_profile"],
               zip(s, core, rep.initial.errors[0].per_point, rep.best.errors[0].per_point))
    fk0 = problem.model.fk_batch(table.P @ rep.theta0.T)
    fk1 = problem.model.fk_batch(table.P @ rep.theta.T)
    pts = path.points
    _write_csv(plots / f"path_overlay_{k}.csv", PLOT_HEADERS["path_overlay"],
               zip(s, core, pts[:, 0], pts[:, 1], fk0[:, 0], fk0[:, 1], fk1[:, 0], fk1[:, 1]))
    _write_csv(plots / f"speed_profile_{k}.csv", PLOT_HEADERS["speed_profile"],
               zip(s, np.sqrt(rep.initial.inner.s2), np.sqrt(rep.best.inner.s2)))
    return {
        "t_f_first_order": traversal_time(rep.best.inner.s2, table.grid),
        "t_f_trapezoidal": timing.t_f,
        "samples": int(times.size),
    }


def run_batch(sc: Scenario, runs: int, out: Path | str | None = None,
              workers: int = 1, seeds=None, write_files: bool = True) -> tuple[list[RunResult], dict]:
    """``runs`` seeded runs (seeds ``sc.seed + k`` unless given).

    Runs may execute in a process pool; results are collected and written in
    run order. Failed runs are recorded and the batch continues.
    """
    if runs < 1:
        raise ValueError("a batch needs at least one run")
    seeds = list(seeds) if seeds is not None else [sc.seed + k for k in range(runs)]
    jobs = [(sc, seed, k) for k, seed in enumerate(seeds[:runs])]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    summary = summarize([r.metrics for r in results])
    if write_files:
        out = Path(out) if out is not None else default_out_dir()
        out.mkdir(parents=True, exist_ok=True)
        problem = build_problem(sc)
        extras = {r.index: write_run_outputs(out, r, problem) for r in results
                  if r.report is not None}
        rows = [[r.metrics[c] for c in METRIC_COLUMNS] for r in results]
        for stat in ("mean", "std"):
            row = dict.fromkeys(METRIC_COLUMNS, "")
            row.update(scenario=sc.name, run=stat)
            for key in ("initial_t_f", "final_t_f", "improvement", "max_core_error"):
                row[key] = summary[key][stat]
            rows.append([row[c] for c in METRIC_COLUMNS])
        _write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
        (out / "report.json").write_text(json.dumps(_report_doc(sc, results, summary, extras),
                                                    indent=1, default=_json_default))
    return results, summary


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


def _report_doc(sc: Scenario, results: list[RunResult], summary: dict, extras: dict) -> dict:
    cfg = sc.optimizer
    runs = []
    for r in results:
        doc = {"run": r.index, "seed": r.seed, "metrics": r.metrics, "error": r.error}
        if r.report is not None:
            rep = r.report
            doc.update(
                free_variable=r.free_variable,
                wall_clock_s=rep.wall_clock,
                theta_initial=rep.theta0, theta_final=rep.theta,
                history={k: v for k, v in rep.history.items()},
                duals={"lambda": rep.duals.lam},
                timing=extras.get(r.index),
            )
        runs.append(doc)
    walls = [r.report.wall_clock for r in results if r.report is not None]
    return {
        "scenario": sc.name,
        "source": sc.source,
        "config": {"N": sc.N, "d": sc.basis.d, "mode": cfg.mode, "alpha": cfg.alpha,
                   "beta": cfg.beta, "max_iters": cfg.max_iters, "window": cfg.window,
                   "tol": cfg.tol, "fixed_lambda": cfg.fixed_lambda, "eps": sc.eps,
                   "cap": sc.cap, "extension": sc.extension},
        "summary": summary,
        "wall_clock_s": {"mean": float(np.mean(walls)) if walls else None,
                         "std": float(np.std(walls)) if walls else None,
                         "max": float(np.max(walls)) if walls else None},
        "runs": runs,
    }

"""One seeded run on the desk-scale planar 3R scenario.

Prints the traversal-time history every 100 iterations and compares the
three inner models (general, no acceleration limits, constant speed) at the
initial and optimized curves. Pass ``--plot`` to draw the speed profiles
(needs matplotlib).

    python3 demos/desk_run.py --seed 3 --iterations 400
"""

import argparse
from pathlib import Path

import numpy as np

from bilevel_topp.inner import solve_inner
from bilevel_topp.outer import optimize
from bilevel_topp.scenario import build_problem, load_scenario, random_free_variable_init

DESK = Path(__file__).resolve().parents[1] / "scenarios" / "desk_3r.toml"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    sc = load_scenario(DESK).with_overrides(max_iters=args.iterations)
    problem = build_problem(sc)
    draw = random_free_variable_init(sc, problem, args.seed)
    print(f"seed {args.seed}: initial heading {draw.free_variable:.3f} rad, "
          f"fit error {1e3 * draw.fit_error:.2f} mm")

    rep = optimize(problem, draw.theta, sc.optimizer)
    t_f = rep.history["t_f"]
    for k in range(0, t_f.size, 100):
        print(f"  iter {k:5d}  t_f {t_f[k]:.4f} s")
    print(f"best iterate {rep.best_iter}: t_f {rep.initial_t_f:.4f} -> {rep.t_f:.4f} s "
          f"({100 * rep.improvement:.1f}%), max core error "
          f"{1e3 * rep.best.max_core_error.max():.2f} mm, {rep.wall_clock:.1f} s")

    print("inner models (t_f in s):")
    for label, theta in (("initial", rep.theta0), ("optimized", rep.theta)):
        vals = [np.sqrt(solve_inner(theta, problem.table, problem.limits, m).value)
                for m in ("general", "no_acc", "const_speed")]
        print(f"  {label:9s} general {vals[0]:.4f}  no_acc {vals[1]:.4f}  const_speed {vals[2]:.4f}")

    if args.plot:
        import matplotlib.pyplot as plt

        s = problem.table.grid.s
        plt.plot(s, np.sqrt(rep.initial.inner.s2), label="initial")
        plt.plot(s, np.sqrt(rep.best.inner.s2), label="optimized")
        plt.axvspan(s[problem.path.i0], s[problem.path.i1], alpha=0.1)
        plt.xlabel("s")
        plt.ylabel("path speed")
        plt.legend()
        plt.show()


if __name__ == "__main__":
    main()

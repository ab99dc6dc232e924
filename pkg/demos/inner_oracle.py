"""The inner speed problem on a random small instance.

Solves one instance with the barrier solver, the dynamic-programming oracle
and the two closed forms, and prints the active constraints at the optimum.

    python3 demos/inner_oracle.py --seed 4
"""

import argparse

import numpy as np

from bilevel_topp.basis import BasisSpec, tabulate
from bilevel_topp.inner import (JointLimits, assemble, brute_force_oracle, solve_const_speed,
                                solve_general, solve_no_acc)
from bilevel_topp.trajectory import build_grid, reconstruct_timing


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    table = tabulate(BasisSpec(4), build_grid(3))
    theta = rng.normal(size=(2, 4))
    limits = JointLimits.symmetric(rng.uniform(0.5, 2.0, 2), rng.uniform(1.0, 10.0, 2))
    sys = assemble(theta, table, limits)

    sol = solve_general(sys, theta)
    print(f"barrier solver   V = {sol.value:.8f}  ({sol.iterations} Newton steps)")
    print(f"DP oracle        V = {brute_force_oracle(sys):.8f}  (upper bound)")
    print(f"no acc. limits   V = {solve_no_acc(theta, table, limits).value:.8f}  (lower bound)")
    print(f"constant speed   V = {solve_const_speed(theta, table, limits).value:.8f}  (upper bound)")
    print("squared speeds:", np.array2string(sol.s2, precision=4))
    print("active constraints (grid point, joint, kind):", sol.active)
    tl = reconstruct_timing(sol.s2, table.grid)
    print(f"trapezoidal traversal time {tl.t_f:.5f} s, first-order {sol.t_f:.5f} s")


if __name__ == "__main__":
    main()

import sys

import numpy as np
import pytest

from bilevel_topp.basis import BasisSpec, tabulate
from bilevel_topp.inner import JointLimits, assemble, solve_general, solve_inner
from bilevel_topp.trajectory import build_grid

DESK_LENGTHS = (2.0, 1.5, 1.0)
DESK_V = (1.75, 1.57, 1.0)
DESK_A = (35.0, 31.4, 20.0)


def make_table(N, d=6):
    return tabulate(BasisSpec(d), build_grid(N))


def random_limits(rng, n, symmetric=False):
    v_hi = rng.uniform(0.5, 2.0, n)
    a_hi = rng.uniform(1.0, 10.0, n)
    if symmetric:
        return JointLimits.symmetric(v_hi, a_hi)
    v_lo = -rng.uniform(0.5, 2.0, n)
    a_lo = -rng.uniform(1.0, 10.0, n)
    return JointLimits(-np.inf, np.inf, v_lo, v_hi, a_lo, a_hi)


def random_instance(rng, n, N, d=4, scale=1.0, symmetric=False):
    """Random theta, basis table and limits; every joint moves."""
    table = make_table(N, d)
    theta = scale * rng.normal(size=(n, d))
    return theta, table, random_limits(rng, n, symmetric)


def generaldiscrete_violation(theta, table, tl, limits):
    """Largest relative breach of the joint limits by (sdot, sdd, t), computed
    directly from the joint-space velocity and acceleration formulas."""
    dq = table.dP @ theta.T
    ddq = table.ddP @ theta.T
    worst = 0.0
    for i in range(table.N + 1):
        qd = dq[i] * tl.sdot[i]
        worst = max(worst, np.max((qd - limits.v_hi) / limits.v_hi),
                    np.max((limits.v_lo - qd) / -limits.v_lo))
        if i < table.N:
            qdd = ddq[i] * tl.sdot[i] ** 2 + dq[i] * tl.sdd[i]
            worst = max(worst, np.max((qdd - limits.a_hi) / limits.a_hi),
                        np.max((limits.a_lo - qdd) / -limits.a_lo))
    return worst


def feasible_profiles(count):
    rng = np.random.default_rng(99)
    out = []
    while len(out) < count:
        theta, table, limits = random_instance(rng, int(rng.integers(1, 4)), int(rng.integers(2, 30)),
                                               d=int(rng.integers(2, 6)))
        if len(out) % 2:
            # random positive profile with limits fitted around it
            x = rng.uniform(0.05, 4.0, table.N + 1)
            sys = assemble(theta, table, limits)
            cv = sys.spd * x
            ca = sys.rho * x[:-1] + sys.up * x[1:]
            margin = rng.uniform(1.0, 1.5)
            v = np.sqrt(np.max(np.abs(cv), axis=1)) * margin + 1e-9
            a = np.max(np.abs(ca), axis=1) * margin + 1e-9
            limits = JointLimits.symmetric(v, a)
        else:
            # convex combination of the optimum and a slow constant profile
            opt = solve_inner(theta, table, limits).s2
            w = rng.uniform(0.0, 1.0)
            x = w * opt + (1 - w) * np.full_like(opt, 1e-3 * opt.min())
        sys = assemble(theta, table, limits)
        assert np.all(sys.A @ x <= sys.q_lim * (1 + 1e-9) + 1e-12)
        out.append((theta, table, limits, x))
    return out


def smooth_instance():
    """A random instance whose active constraints are linearly independent
    and carry clearly positive multipliers, so V is differentiable there."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        theta, table, limits = random_instance(rng, 2, 12, d=4)
        sys = assemble(theta, table, limits)
        sol = solve_general(sys, theta)
        A = sys.A.toarray()
        slack = sys.q_lim - A @ sol.s2
        act = slack <= 1e-7 * np.maximum(np.abs(sys.q_lim), 1.0)
        if not act.any():
            continue
        rank_ok = np.linalg.matrix_rank(A[act]) == act.sum()
        strict = np.all(sol.zeta[act] > 1e-6 * np.max(sol.zeta))
        gap = np.min(slack[~act] / np.maximum(np.abs(sys.q_lim[~act]), 1.0)) > 1e-3
        if rank_ok and strict and gap:
            return theta, table, limits
    raise AssertionError("no smooth instance found")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def desk_limits():
    return JointLimits.symmetric(DESK_V, DESK_A)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])

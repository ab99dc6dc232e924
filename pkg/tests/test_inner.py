import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_topp.basis import BasisSpec, GridBasis, PathGrid
from bilevel_topp.inner import (InfeasibleError, JointLimits, assemble, brute_force_oracle,
                                descent_direction_general, feasible_point_dagger, solve_const_speed,
                                solve_general, solve_inner, solve_no_acc)

from conftest import make_table, random_instance, smooth_instance


def hand_table(dq_rows, ddq_rows, s):
    """Table whose rows give ``p' theta = dq`` and ``p'' theta = ddq`` for theta = [[1, 1]]."""
    dq_rows, ddq_rows = np.asarray(dq_rows, float), np.asarray(ddq_rows, float)
    K = dq_rows.size
    P = np.zeros((K, 2))
    dP = np.column_stack([dq_rows, np.zeros(K)])
    ddP = np.column_stack([np.zeros(K), ddq_rows])
    return GridBasis(BasisSpec(2), PathGrid(np.asarray(s, float)), P, dP, ddP)


def test_assemble_zero_theta():
    table = make_table(3, 4)
    sys = assemble(np.zeros((2, 4)), table, JointLimits.symmetric([1, 1], [1, 1]))
    assert sys.A.nnz == 0
    assert np.all(sys.A @ np.full(4, 1e5) <= sys.q_lim)


def test_assemble_velocity_rows_by_hand():
    # q = s - 1.5 s**2 gives p'theta = (1, -2) at s = (0, 1)
    table = make_table(1, 3)
    sys = assemble([[0.0, 1.0, -1.5]], table, JointLimits.symmetric([1.0], [5.0]))
    A = sys.A.toarray()
    np.testing.assert_allclose(A[:2], [[1, 0], [0, -4]])
    np.testing.assert_allclose(A[2:4], [[-1, 0], [0, 4]])
    np.testing.assert_allclose(sys.q_lim[:4], [1, 1, 1, 1])


def test_assemble_acceleration_rows_by_hand():
    # p''theta = 3 and p'theta = 2 at s = 0 with ds = 1
    table = make_table(1, 3)
    sys = assemble([[0.0, 2.0, 1.5]], table, JointLimits.symmetric([1.0], [5.0]))
    assert sys.rho[0, 0] == pytest.approx(2.0)
    assert sys.up[0, 0] == pytest.approx(1.0)
    A = sys.A.toarray()
    np.testing.assert_allclose(A[4], [2, 1])
    np.testing.assert_allclose(A[5], [-2, -1])
    np.testing.assert_allclose(sys.q_lim[4:], [5, 5])


def test_row_index_round_trip():
    theta, table, limits = random_instance(np.random.default_rng(0), 2, 3)
    sys = assemble(theta, table, limits)
    parts = sys.unstack(np.arange(sys.n_rows, dtype=float))
    np.testing.assert_array_equal(sys.stack(parts), np.arange(sys.n_rows))
    assert sys.row_index(0) == (0, 0, "v+")
    assert sys.row_index(sys.n_rows - 1) == (2, 1, "a-")


def test_general_zero_theta_is_unbounded():
    table = make_table(4, 3)
    sol = solve_inner(np.zeros((2, 3)), table, JointLimits.symmetric([1, 1], [1, 1]))
    assert sol.value == 0.0 and sol.unbounded
    np.testing.assert_array_equal(sol.s2, 1e6)
    np.testing.assert_array_equal(sol.direction, 0.0)


def test_general_matches_oracle_on_small_instance():
    rng = np.random.default_rng(7)
    theta, table, limits = random_instance(rng, 1, 2)
    sys = assemble(theta, table, limits)
    V = solve_general(sys, theta).value
    ref = brute_force_oracle(sys)
    assert V == pytest.approx(ref, rel=1e-3)
    assert V <= ref * (1 + 1e-9)


def test_general_solution_is_feasible_and_converged(rng):
    theta, table, limits = random_instance(rng, 3, 40, d=6)
    sys = assemble(theta, table, limits)
    sol = solve_general(sys, theta)
    assert np.all(sys.A @ sol.s2 <= sys.q_lim * (1 + 1e-9) + 1e-12)
    assert sol.kkt_residual < 1e-6
    assert sol.active
    assert np.all(sol.zeta >= 0)


def test_general_is_deterministic(rng):
    theta, table, limits = random_instance(rng, 2, 30, d=5)
    a = solve_inner(theta, table, limits)
    b = solve_inner(theta, table, limits)
    np.testing.assert_allclose(a.s2, b.s2, rtol=1e-10, atol=0)
    assert a.value == b.value


def test_general_infeasible_certificate():
    table = make_table(3, 2)
    # q' = 1e6 everywhere: the speed would have to fall below the floor
    limits = JointLimits.symmetric([1.0], [1.0])
    sys = assemble([[0.0, 1e6]], table, limits)
    with pytest.raises(InfeasibleError) as info:
        solve_general(sys)
    assert info.value.certificate
    assert all(kind in ("v+", "v-", "a+", "a-") for _, _, kind in info.value.certificate)
    assert brute_force_oracle(sys) == math.inf


def test_general_velocity_only_matches_no_acc(rng):
    theta, table, _ = random_instance(rng, 2, 25, d=5)
    v = rng.uniform(0.5, 2.0, 2)
    huge = JointLimits.symmetric(v, [1e9, 1e9])
    gen = solve_inner(theta, table, huge)
    ref = solve_no_acc(theta, table, huge)
    assert gen.value == pytest.approx(ref.value, rel=1e-6)


def test_zero_duals_give_zero_direction(rng):
    theta, table, limits = random_instance(rng, 2, 5)
    sol = solve_inner(theta, table, limits)
    sol.zeta = np.zeros_like(sol.zeta)
    np.testing.assert_array_equal(descent_direction_general(theta, sol, table), 0.0)


def test_direction_rejects_stale_solution(rng):
    theta, table, limits = random_instance(rng, 2, 5)
    sol = solve_inner(theta, table, limits)
    with pytest.raises(ValueError):
        descent_direction_general(theta + 1e-3, sol, table)
    with pytest.raises(ValueError):
        descent_direction_general(theta, sol, make_table(6, theta.shape[1]))


def test_direction_matches_finite_differences():
    theta, table, limits = smooth_instance()
    sol = solve_inner(theta, table, limits)
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(5):
        v = rng.normal(size=theta.shape)
        fd = (solve_inner(theta + h * v, table, limits).value
              - solve_inner(theta - h * v, table, limits).value) / (2 * h)
        assert float(np.sum(sol.direction * v)) == pytest.approx(fd, rel=1e-3)


def test_const_speed_hand_example():
    table = hand_table([0.5, 1.0, 0.8], [10.0, 10.0, 10.0], [0, 0.5, 1])
    limits = JointLimits.symmetric([1.75], [35.0])
    sol = solve_const_speed([[1.0, 1.0]], table, limits)
    assert sol.value == pytest.approx(1 / 1.75**2, rel=1e-12)
    assert sol.value > 10 / 35
    np.testing.assert_allclose(np.sqrt(sol.s2), 1.75)
    assert sol.active == [(1, 0, "v")]
    assert feasible_point_dagger([[1.0, 1.0]], table, limits) == pytest.approx(1.75)


def test_const_speed_zero_theta():
    table = make_table(4, 3)
    sol = solve_const_speed(np.zeros((1, 3)), table, JointLimits.symmetric([1.0], [1.0]))
    assert sol.value == 0.0 and sol.unbounded
    assert feasible_point_dagger(np.zeros((1, 3)), table, JointLimits.symmetric([1.0], [1.0])) == math.inf


def test_const_speed_symmetric_limits_simplified_form(rng):
    for _ in range(20):
        theta, table, limits = random_instance(rng, 3, 15, d=5, symmetric=True)
        dq = table.dP @ theta.T
        ddq = table.ddP @ theta.T
        ref = max(np.max((dq / limits.v_hi) ** 2), np.max(np.abs(ddq / limits.a_hi)))
        assert solve_const_speed(theta, table, limits).value == pytest.approx(ref, rel=1e-12)


def test_const_speed_tie_breaking_lowest_index():
    # equal velocity terms at points 0 and 2; the first one wins
    table = hand_table([1.0, 0.5, -1.0], [0.0, 0.0, 0.0], [0, 0.5, 1])
    sol = solve_const_speed([[1.0, 1.0]], table, JointLimits.symmetric([1.0], [1.0]))
    assert sol.active == [(0, 0, "v"), (2, 0, "v")]
    np.testing.assert_allclose(sol.direction, [[2.0 * 1.0, 0.0]])


def test_no_acc_hand_example():
    # q' = 1 + s + 2 s**2 gives (1, 2, 4) on s = (0, 0.5, 1)
    table = make_table(2, 4)
    theta = [[0.0, 1.0, 0.5, 2.0 / 3.0]]
    np.testing.assert_allclose(table.dP @ np.array(theta[0]), [1, 2, 4])
    limits = JointLimits.symmetric([2.0], [1.0])
    sol = solve_no_acc(theta, table, limits)
    # fastest admissible speed per point is v / |q'| = (2, 1, 0.5); the last
    # point only enters through its constraint
    sdot_max = 2.0 / np.array([1.0, 2.0, 4.0])
    ref = (0.5 / sdot_max[0] + 0.5 / sdot_max[1]) ** 2
    assert ref == 0.5625
    assert sol.value == pytest.approx(ref, rel=1e-14)
    np.testing.assert_allclose(sol.s2, sdot_max**2)
    huge = JointLimits.symmetric([2.0], [1e9])
    assert solve_inner(theta, table, huge).value == pytest.approx(ref, rel=1e-6)


def test_no_acc_zero_theta_and_flags():
    table = make_table(4, 3)
    limits = JointLimits.symmetric([1.0], [1.0])
    sol = solve_no_acc(np.zeros((1, 3)), table, limits)
    assert sol.value == 0.0 and sol.unbounded
    # joint that stops moving at s = 0.5 only
    sol = solve_no_acc([[0.0, -1.0, 1.0]], table, limits)
    assert math.isinf(sol.s2[2]) and np.all(np.isfinite(np.delete(sol.s2, 2)))
    assert sol.unbounded


def test_no_acc_subgradient_matches_finite_differences():
    # one joint dominates everywhere, so V is smooth
    table = make_table(20, 4)
    theta = np.array([[0.0, 2.0, 0.3, 0.1], [0.0, 0.2, 0.1, 0.0]])
    limits = JointLimits.symmetric([1.0, 1.0], [1.0, 1.0])
    sol = solve_no_acc(theta, table, limits)
    assert {j for _, j, _ in sol.active} == {0}
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(5):
        v = rng.normal(size=theta.shape)
        fd = (solve_no_acc(theta + h * v, table, limits).value
              - solve_no_acc(theta - h * v, table, limits).value) / (2 * h)
        assert float(np.sum(sol.direction * v)) == pytest.approx(fd, rel=1e-5)


def test_dagger_is_feasible(rng):
    for _ in range(30):
        theta, table, limits = random_instance(rng, 2, 10, d=5)
        sd = feasible_point_dagger(theta, table, limits)
        sys = assemble(theta, table, limits)
        x = np.full(table.N + 1, sd**2)
        assert np.all(sys.A @ x <= sys.q_lim * (1 + 1e-12) + 1e-12)


def test_oracle_unconstrained_box():
    table = make_table(3, 2)
    sys = assemble(np.zeros((1, 2)), table, JointLimits.symmetric([1.0], [1.0]))
    assert brute_force_oracle(sys, s2_ceiling=100.0) == pytest.approx(1.0 / 100.0, rel=1e-12)


def test_oracle_refuses_large_problems():
    table = make_table(5, 2)
    sys = assemble(np.ones((1, 2)), table, JointLimits.symmetric([1.0], [1.0]))
    with pytest.raises(ValueError):
        brute_force_oracle(sys)


def test_unknown_mode():
    theta, table, limits = random_instance(np.random.default_rng(1), 1, 3)
    with pytest.raises(ValueError):
        solve_inner(theta, table, limits, "fast")


def test_joint_limits_validation():
    with pytest.raises(ValueError):
        JointLimits(-np.inf, np.inf, [0.5], [1.0], [-1.0], [1.0])
    with pytest.raises(ValueError):
        JointLimits(-np.inf, np.inf, [-1.0], [1.0], [-1.0], [0.0])
    with pytest.raises(ValueError):
        JointLimits([1.0], [0.0], [-1.0], [1.0], [-1.0], [1.0])


def test_homogeneity_of_closed_forms(rng):
    for _ in range(10):
        theta, table, limits = random_instance(rng, 2, 10, d=5)
        c = rng.uniform(0.1, 3.0)
        a = solve_no_acc(theta, table, limits).value
        assert solve_no_acc(c * theta, table, limits).value == pytest.approx(c * c * a, rel=1e-12)
        vel = JointLimits(-np.inf, np.inf, limits.v_lo, limits.v_hi, [-1e12] * 2, [1e12] * 2)
        b = solve_const_speed(theta, table, vel).value
        assert solve_const_speed(c * theta, table, vel).value == pytest.approx(c * c * b, rel=1e-12)


def test_closed_form_directions_stay_bounded(rng):
    """Squared-time directions remain bounded on a ball, even where the
    square-rooted value would have an exploding derivative."""
    table = make_table(30, 5)
    limits = JointLimits.symmetric([1.0, 1.5], [4.0, 6.0])
    R = 3.0
    p1 = np.max(np.linalg.norm(table.dP, axis=1))
    p2 = np.max(np.linalg.norm(table.ddP, axis=1))
    v_min, a_min = 1.0, 4.0
    L_const = max(2 * R * p1 * p1 / v_min**2, p2 / a_min)
    L_noacc = 2 * (R * p1 / v_min) * (p1 / v_min)
    for k in range(100):
        theta = rng.normal(size=(2, 5))
        theta *= (R if k % 2 else 1e-6) / np.linalg.norm(theta)
        assert np.linalg.norm(solve_const_speed(theta, table, limits).direction) <= L_const
        assert np.linalg.norm(solve_no_acc(theta, table, limits).direction) <= L_noacc
    tiny = 1e-6 * np.ones((2, 5))
    sol = solve_no_acc(tiny, table, limits)
    sqrt_grad = np.linalg.norm(sol.direction) / (2 * math.sqrt(sol.value))
    assert sqrt_grad > 1e3 * np.linalg.norm(sol.direction)


small = st.integers(0, 2**32 - 1)


@settings(max_examples=30, deadline=None)
@given(seed=small)
def test_direction_has_nonnegative_inner_product(seed):
    rng = np.random.default_rng(seed)
    n, N = int(rng.integers(1, 4)), int(rng.integers(2, 15))
    theta, table, limits = random_instance(rng, n, N, d=int(rng.integers(2, 6)))
    sol = solve_inner(theta, table, limits)
    assert float(np.sum(sol.direction * theta)) >= -1e-9


@settings(max_examples=30, deadline=None)
@given(seed=small, w=st.sampled_from([0.25, 0.5, 0.75]))
def test_closed_forms_are_convex(seed, w):
    rng = np.random.default_rng(seed)
    t1, table, limits = random_instance(rng, 2, 10, d=5)
    t2 = rng.normal(size=t1.shape)
    for solve in (solve_const_speed, solve_no_acc):
        mid = solve(w * t1 + (1 - w) * t2, table, limits).value
        ends = w * solve(t1, table, limits).value + (1 - w) * solve(t2, table, limits).value
        assert mid <= ends + 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=small)
def test_const_speed_matches_dagger(seed):
    rng = np.random.default_rng(seed)
    theta, table, limits = random_instance(rng, 2, 12, d=5)
    sd = feasible_point_dagger(theta, table, limits)
    assert solve_const_speed(theta, table, limits).value == pytest.approx(1 / sd**2, rel=1e-10)

"""Lower-level problem: fastest path-speed profile for a fixed joint curve.

The decision variable is the squared path speed ``x_i = sdot_i**2`` on every
grid point. With ``y_ij = p'_i theta_j`` and ``w_ij = p''_i theta_j`` the
constraints are linear in ``x``::

    -v_lo_j**2 <= sign(y_ij) y_ij**2 x_i <= v_hi_j**2                 i = 0..N
     a_lo_j <= rho_ij x_i + y_ij / (2 ds_i) x_{i+1} <= a_hi_j          i = 0..N-1
     rho_ij = w_ij - y_ij / (2 ds_i)

and the objective is the squared first-order traversal time
``V = (sum_{i<N} ds_i / sqrt(x_i))**2``, which is convex in ``x``.

Three solvers are provided: a log-barrier Newton method for the general
problem, and closed forms for the constant-speed and the velocity-only cases.
Each returns the value ``V(theta)`` together with a direction in ``theta``
space (the derivative of the inner Lagrangian, or a subgradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded
from scipy.optimize import linprog

from .basis import GridBasis, check_theta

__all__ = [
    "JointLimits",
    "ConstraintSystem",
    "InnerSolution",
    "InfeasibleError",
    "assemble",
    "solve_general",
    "descent_direction_general",
    "solve_const_speed",
    "solve_no_acc",
    "feasible_point_dagger",
    "brute_force_oracle",
    "solve_inner",
    "MODES",
]

MODES = ("general", "const_speed", "no_acc")

# row kinds in stacking order of the constraint matrix
KINDS = ("v+", "v-", "a+", "a-")


class InfeasibleError(RuntimeError):
    """No speed profile above the floor satisfies the joint limits.

    ``certificate`` lists the ``(i, j, kind)`` constraints that bind.
    """

    def __init__(self, message, certificate=()):
        super().__init__(message)
        self.certificate = list(certificate)


def _vec(x, n, name):
    a = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointLimits:
    """Per-joint position, velocity and acceleration bounds.

    Velocity and acceleration bounds must straddle zero (``v_lo < 0 < v_hi``),
    which makes standing still admissible. Position bounds may be infinite.
    """

    q_lo: np.ndarray
    q_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray

    def __post_init__(self):
        n = max(np.size(v) for v in (self.q_lo, self.q_hi, self.v_lo, self.v_hi, self.a_lo, self.a_hi))
        for name in ("q_lo", "q_hi", "v_lo", "v_hi", "a_lo", "a_hi"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))
        if not (np.all(self.v_lo < 0) and np.all(self.v_hi > 0)):
            raise ValueError("velocity limits must satisfy v_lo < 0 < v_hi")
        if not (np.all(self.a_lo < 0) and np.all(self.a_hi > 0)):
            raise ValueError("acceleration limits must satisfy a_lo < 0 < a_hi")
        if not np.all(self.q_lo < self.q_hi):
            raise ValueError("position limits must satisfy q_lo < q_hi")
        for name in ("v_lo", "v_hi", "a_lo", "a_hi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def symmetric(cls, v, a, q_lo=-np.inf, q_hi=np.inf):
        v = np.asarray(v, dtype=float)
        a = np.asarray(a, dtype=float)
        n = max(v.size, a.size)
        return cls(_vec(q_lo, n, ""), _vec(q_hi, n, ""), -v, v, -a, a)

    @property
    def n(self) -> int:
        return self.v_hi.size


@dataclass(frozen=True)
class ConstraintSystem:
    """Linear constraints ``A x <= q_lim`` of the inner problem, kept structured.

    ``spd`` holds the diagonal entries ``sign(y) y**2`` (shape ``(n, N+1)``),
    ``rho`` and ``up`` the main and upper diagonals of the acceleration blocks
    (shape ``(n, N)``). The dense/sparse stacked form is built on demand.
    """

    spd: np.ndarray
    rho: np.ndarray
    up: np.ndarray
    v_hi2: np.ndarray
    v_lo2: np.ndarray
    a_hi: np.ndarray
    a_lo: np.ndarray
    ds: np.ndarray
    dq: np.ndarray | None = None  # p'theta, kept for the theta-derivative

    @property
    def n(self) -> int:
        return self.spd.shape[0]

    @property
    def N(self) -> int:
        return self.spd.shape[1] - 1

    @property
    def n_rows(self) -> int:
        return 2 * self.n * (2 * self.N + 1)

    @property
    def A(self) -> sp.csr_matrix:
        n, N = self.n, self.N
        blocks_spd = [sp.diags(self.spd[j]) for j in range(n)]
        blocks_acc = [
            sp.diags([self.rho[j], self.up[j]], [0, 1], shape=(N, N + 1)) for j in range(n)
        ]
        A_spd = sp.vstack(blocks_spd)
        A_acc = sp.vstack(blocks_acc)
        return sp.vstack([A_spd, -A_spd, A_acc, -A_acc]).tocsr()

    @property
    def q_lim(self) -> np.ndarray:
        N = self.N
        return np.concatenate([
            np.repeat(self.v_hi2, N + 1),
            np.repeat(self.v_lo2, N + 1),
            np.repeat(self.a_hi, N),
            np.repeat(-self.a_lo, N),
        ])

    def row_index(self, k: int) -> tuple[int, int, str]:
        """``(i, j, kind)`` of stacked row ``k``."""
        n, N = self.n, self.N
        nv = n * (N + 1)
        na = n * N
        if k < 2 * nv:
            block, r = divmod(k, nv)
            j, i = divmod(r, N + 1)
            return i, j, KINDS[block]
        block, r = divmod(k - 2 * nv, na)
        j, i = divmod(r, N)
        return i, j, KINDS[2 + block]

    def slacks(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        cv = self.spd * x
        ca = self.rho * x[:-1] + self.up * x[1:]
        return (self.v_hi2[:, None] - cv, self.v_lo2[:, None] + cv,
                self.a_hi[:, None] - ca, ca - self.a_lo[:, None])

    def stack(self, parts) -> np.ndarray:
        """Flatten per-row arrays given as ``(v+, v-, a+, a-)`` in ``A`` row order."""
        return np.concatenate([np.ravel(p) for p in parts])

    def unstack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        n, N = self.n, self.N
        nv, na = n * (N + 1), n * N
        return (z[:nv].reshape(n, N + 1), z[nv:2 * nv].reshape(n, N + 1),
                z[2 * nv:2 * nv + na].reshape(n, N), z[2 * nv + na:].reshape(n, N))


def assemble(theta, table: GridBasis, limits: JointLimits) -> ConstraintSystem:
    theta = check_theta(theta, table.d)
    if theta.shape[0] != limits.n:
        raise ValueError(f"theta has {theta.shape[0]} joints, limits have {limits.n}")
    dq = (table.dP @ theta.T).T  # (n, N+1)
    ddq = (table.ddP @ theta.T).T
    ds = table.ds
    spd = np.where(dq >= 0, 1.0, -1.0) * dq**2
    up = dq[:, :-1] / (2.0 * ds)
    rho = ddq[:, :-1] - up
    return ConstraintSystem(spd, rho, up, limits.v_hi**2, limits.v_lo**2,
                            limits.a_hi, limits.a_lo, ds, dq)


@dataclass
class InnerSolution:
    """Result of an inner solve.

    ``value`` is the squared traversal time ``V``; ``s2`` the squared path
    speeds (``inf`` where unbounded). ``zeta`` holds the constraint
    multipliers in ``A`` row order for the general solver. ``direction`` has
    the shape of ``theta``.
    """

    value: float
    s2: np.ndarray
    mode: str
    theta: np.ndarray
    direction: np.ndarray | None = None
    zeta: np.ndarray | None = None
    active: list = field(default_factory=list)
    unbounded: bool = False
    kkt_residual: float = 0.0
    iterations: int = 0

    @property
    def t_f(self) -> float:
        return math.sqrt(self.value)


def _first_order_value(x: np.ndarray, ds: np.ndarray) -> float:
    return float(np.sum(ds / np.sqrt(x[:-1]))) ** 2


class _Barrier:
    """Log-barrier function of the inner problem and its Newton system."""

    def __init__(self, sys: ConstraintSystem, floor: float, ceil: float):
        self.sys = sys
        self.floor, self.ceil = floor, ceil
        self.ds = sys.ds
        self.m = sys.n_rows + 2 * (sys.N + 1)

    def slacks(self, x):
        sv_p, sv_m, sa_p, sa_m = self.sys.slacks(x)
        return sv_p, sv_m, sa_p, sa_m, x - self.floor, self.ceil - x

    def feasible(self, x) -> bool:
        return all(np.all(s > 0) for s in self.slacks(x))

    def value(self, x, t) -> float:
        sl = self.slacks(x)
        if not all(np.all(s > 0) for s in sl):
            return math.inf
        g = float(np.sum(self.ds / np.sqrt(x[:-1])))
        return t * g * g - sum(float(np.sum(np.log(s))) for s in sl)

    def gradient(self, x, t, sl=None):
        sys, ds = self.sys, self.ds
        sv_p, sv_m, sa_p, sa_m, sf, sc = self.slacks(x) if sl is None else sl
        xi = x[:-1]
        g = float(np.sum(ds / np.sqrt(xi)))
        u = np.zeros(sys.N + 1)
        u[:-1] = -0.5 * ds * xi**-1.5
        grad = (2.0 * t * g * u + np.sum(sys.spd * (1.0 / sv_p - 1.0 / sv_m), axis=0)
                - 1.0 / sf + 1.0 / sc)
        ha = 1.0 / sa_p - 1.0 / sa_m
        grad[:-1] += np.sum(sys.rho * ha, axis=0)
        grad[1:] += np.sum(sys.up * ha, axis=0)
        return grad

    def newton(self, x, t, sl=None):
        sys, ds = self.sys, self.ds
        N = sys.N
        sl = self.slacks(x) if sl is None else sl
        sv_p, sv_m, sa_p, sa_m, sf, sc = sl
        xi = x[:-1]
        g = float(np.sum(ds / np.sqrt(xi)))
        u = np.zeros(N + 1)
        u[:-1] = -0.5 * ds * xi**-1.5
        h = np.zeros(N + 1)
        h[:-1] = 0.75 * ds * xi**-2.5

        W = sys.spd
        Dv = 1.0 / sv_p**2 + 1.0 / sv_m**2
        Da = 1.0 / sa_p**2 + 1.0 / sa_m**2
        R, U = sys.rho, sys.up
        grad = self.gradient(x, t, sl)

        diag = 2.0 * t * g * h + np.sum(W**2 * Dv, axis=0) + 1.0 / sf**2 + 1.0 / sc**2
        diag[:-1] += np.sum(R**2 * Da, axis=0)
        diag[1:] += np.sum(U**2 * Da, axis=0)
        off = np.sum(R * U * Da, axis=0)

        ab = np.empty((2, N + 1))
        ab[0, 0] = 0.0
        ab[0, 1:] = off
        ab[1] = diag
        # H = T + 2t u u^T ; Sherman-Morrison on the tridiagonal part
        yz = solveh_banded(ab, np.column_stack([-grad, u]), check_finite=False)
        y, z = yz[:, 0], yz[:, 1]
        c = 2.0 * t
        dx = y - (c * (u @ y) / (1.0 + c * (u @ z))) * z
        return dx, grad

    def max_step(self, x, dx, sl=None) -> float:
        """Largest step along ``dx`` keeping every slack positive."""
        sys = self.sys
        dv = sys.spd * dx
        da = sys.rho * dx[:-1] + sys.up * dx[1:]
        sl = self.slacks(x) if sl is None else sl
        rates = (dv, -dv, da, -da, -dx, dx)  # d(slack)/d(step) = -rate
        smax = math.inf
        for s, r in zip(sl, rates):
            mask = r > 0
            if np.any(mask):
                smax = min(smax, float(np.min(s[mask] / r[mask])))
        return smax


def _constant_ceiling(sys: ConstraintSystem) -> float:
    """Largest constant ``x`` with ``A x <= q_lim`` (``inf`` if unconstrained)."""
    A1 = sys.A @ np.ones(sys.N + 1)
    b = sys.q_lim
    pos = A1 > 0
    if np.any(b[~pos] < 0):
        return -math.inf
    return float(np.min(b[pos] / A1[pos])) if np.any(pos) else math.inf


def _phase_one(sys: ConstraintSystem, floor: float, ceil: float) -> np.ndarray | None:
    """Strictly feasible point by maximizing the smallest slack (LP)."""
    A = sys.A.toarray()
    b = sys.q_lim
    K = sys.N + 1
    I = np.eye(K)
    A_ub = np.block([
        [A, np.ones((A.shape[0], 1))],
        [-I, np.ones((K, 1))],
        [I, np.ones((K, 1))],
    ])
    b_ub = np.concatenate([b, -floor * np.ones(K), ceil * np.ones(K)])
    c = np.zeros(K + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * K + [(None, 1.0)],
                  method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        return None
    return res.x[:-1]


def _active(sys: ConstraintSystem, x, rtol=1e-6):
    out = []
    for kind, s, bound in zip(KINDS, sys.slacks(x),
                              (sys.v_hi2, sys.v_lo2, sys.a_hi, -sys.a_lo)):
        scale = np.maximum(np.abs(bound), 1e-300)[:, None]
        for j, i in zip(*np.nonzero(s <= rtol * scale)):
            out.append((int(i), int(j), kind))
    out.sort()
    return out


def solve_general(sys: ConstraintSystem, theta=None, s2_floor: float = 1e-9,
                  s2_ceiling: float = 1e6, gap_rtol: float = 1e-10,
                  mu_factor: float = 10.0, max_newton: int = 500) -> InnerSolution:
    """Log-barrier interior-point solve of the general inner problem.

    The Newton system is tridiagonal plus a rank-one term and is solved in
    ``O(N)``. Multipliers are recovered as ``mu / slack`` at the last centered
    iterate.

    Raises
    ------
    InfeasibleError
        If no profile with ``s2 >= s2_floor`` satisfies the constraints.
    """
    N = sys.N
    if theta is None:
        theta = np.zeros((sys.n, 0))
    if not np.any(sys.spd) and not np.any(sys.rho) and not np.any(sys.up):
        s2 = np.full(N + 1, s2_ceiling)
        return InnerSolution(0.0, s2, "general", np.array(theta, float),
                             zeta=np.zeros(sys.n_rows), unbounded=True)

    c_max = _constant_ceiling(sys)
    x = None
    if c_max > 0:
        c = min(0.5 * c_max, 0.5 * s2_ceiling)
        if c > 2.0 * s2_floor:
            x = np.full(N + 1, c)
    bar = _Barrier(sys, s2_floor, s2_ceiling)
    if x is None:
        x = _phase_one(sys, s2_floor, s2_ceiling)
        # the LP solver's tolerance can leave a point on the boundary
        if x is not None and not bar.feasible(x):
            x = None
    if x is None:
        raise InfeasibleError(
            "joint limits cannot be met at any admissible path speed",
            _active(sys, np.full(N + 1, s2_floor), rtol=0.0) or _active(sys, np.full(N + 1, s2_floor), rtol=1.0),
        )

    t = bar.m / max(_first_order_value(x, sys.ds), 1e-300)
    iters = 0
    while True:
        last = 1.0 / t <= gap_rtol * _first_order_value(x, sys.ds)
        # loose centering until the final barrier weight, then tight
        tol = 1e-12 if last else 1e-4
        prev = math.inf
        sl = bar.slacks(x)
        for _ in range(max_newton):
            try:
                dx, grad = bar.newton(x, t, sl)
            except np.linalg.LinAlgError:
                break
            lam2 = float(-grad @ dx)
            # stop at the tolerance or once rounding keeps the decrement from
            # shrinking
            if not lam2 > tol or not lam2 < 0.9 * prev or not np.all(np.isfinite(dx)):
                break
            prev = lam2
            step = min(1.0, 0.99 * bar.max_step(x, dx, sl))
            # the barrier is convex along dx; bound the directional derivative
            # at the trial point instead of comparing function values, which
            # lose all precision at large t
            while step > 1e-12:
                trial = x + step * dx
                sl_trial = bar.slacks(trial)
                if float(bar.gradient(trial, t, sl_trial) @ dx) <= 0.1 * lam2:
                    break
                step *= 0.5
            if step <= 1e-12:
                break
            x, sl = trial, sl_trial
            iters += 1
        if last:
            break
        t *= mu_factor

    sv_p, sv_m, sa_p, sa_m, sf, sc = bar.slacks(x)
    zeta = sys.stack([1.0 / (t * s) for s in (sv_p, sv_m, sa_p, sa_m)])
    # stationarity of grad f + A^T zeta - z_floor + z_ceil, relative to the
    # size of the terms that cancel
    g = float(np.sum(sys.ds / np.sqrt(x[:-1])))
    gf = np.zeros(N + 1)
    gf[:-1] = 2.0 * g * (-0.5 * sys.ds * x[:-1] ** -1.5)
    A = sys.A
    zf, zc = 1.0 / (t * sf), 1.0 / (t * sc)
    r = gf + A.T @ zeta - zf + zc
    scale = np.maximum.reduce([np.abs(gf), abs(A).T @ zeta, zf, zc, np.ones(N + 1)])
    kkt = float(np.max(np.abs(r) / scale))
    return InnerSolution(_first_order_value(x, sys.ds), x, "general", np.array(theta, float),
                         zeta=zeta, active=_active(sys, x), kkt_residual=kkt,
                         iterations=iters)


def descent_direction_general(theta, sol: InnerSolution, table: GridBasis,
                              sys: ConstraintSystem | None = None) -> np.ndarray:
    """Derivative of ``zeta^T A(theta) s2`` with respect to ``theta``.

    Uses the complementary-slackness form: velocity terms
    ``2 (z_v+ + z_v-) s2_i (p'_i theta_j) p'_i`` plus acceleration terms
    ``(z_a+ - z_a-) ((p''_i - p'_i / 2ds_i) s2_i + s2_{i+1} / 2ds_i p'_i)``.
    """
    theta = check_theta(theta, table.d)
    n, N = theta.shape[0], table.N
    if sol.zeta is None or sol.zeta.size != 2 * n * (2 * N + 1):
        raise ValueError("inner solution carries no multipliers matching this problem")
    if sol.theta.shape != theta.shape or not np.array_equal(sol.theta, theta):
        raise ValueError("inner solution was computed for a different theta")
    x = sol.s2
    nv, na = n * (N + 1), n * N
    z = sol.zeta
    zv = (z[:nv] + z[nv:2 * nv]).reshape(n, N + 1)
    za = (z[2 * nv:2 * nv + na] - z[2 * nv + na:]).reshape(n, N)
    dq = (table.dP @ theta.T).T
    ds = table.ds
    d = (2.0 * zv * x * dq) @ table.dP
    d += (za * x[:-1]) @ table.ddP[:-1]
    d += (za * (x[1:] - x[:-1]) / (2.0 * ds)) @ table.dP[:-1]
    return d


def _vel_terms(dq, limits):
    """``c_ij = max(y/v_hi, y/v_lo) >= 0`` and the divisor picked by the max."""
    v_hi, v_lo = limits.v_hi[:, None], limits.v_lo[:, None]
    c_hi, c_lo = dq / v_hi, dq / v_lo
    pick_hi = c_hi >= c_lo
    return np.where(pick_hi, c_hi, c_lo), np.where(pick_hi, v_hi, v_lo)


def _acc_terms(ddq, limits):
    a_hi, a_lo = limits.a_hi[:, None], limits.a_lo[:, None]
    c_hi, c_lo = ddq / a_hi, ddq / a_lo
    pick_hi = c_hi >= c_lo
    return np.where(pick_hi, c_hi, c_lo), np.where(pick_hi, a_hi, a_lo)


def solve_const_speed(theta, table: GridBasis, limits: JointLimits) -> InnerSolution:
    """Closed-form inner value when the path speed is constant.

    ``V = max_ij max(c_v(i,j)**2, c_a(i,j))``; the returned direction is the
    gradient of one maximizing term, ties broken by lowest ``i``, then lowest
    ``j``, velocity before acceleration.
    """
    theta = check_theta(theta, table.d)
    dq = (table.dP @ theta.T).T
    ddq = (table.ddP @ theta.T).T
    cv, vsel = _vel_terms(dq, limits)
    ca, asel = _acc_terms(ddq, limits)
    # (i, j, kind) lexicographic order
    terms = np.stack([(cv**2).T, ca.T], axis=2)
    k = int(np.argmax(terms))
    V = float(terms.flat[k])
    N1 = table.N + 1
    direction = np.zeros_like(theta)
    if V <= 0.0:
        return InnerSolution(0.0, np.full(N1, np.inf), "const_speed", theta,
                             direction=direction, unbounded=True)
    i, j, kind = np.unravel_index(k, terms.shape)
    if kind == 0:
        direction[j] = 2.0 * cv[j, i] / vsel[j, i] * table.dP[i]
    else:
        direction[j] = table.ddP[i] / asel[j, i]
    ties = np.argwhere(terms >= V * (1 - 1e-12))
    active = [(int(a), int(b), "v" if c == 0 else "a") for a, b, c in ties]
    return InnerSolution(V, np.full(N1, 1.0 / V), "const_speed", theta,
                         direction=direction, active=active)


def feasible_point_dagger(theta, table: GridBasis, limits: JointLimits) -> float:
    """Largest admissible constant path speed, as a minimum of per-constraint ratios.

    Returns ``inf`` when no joint moves.
    """
    theta = check_theta(theta, table.d)
    dq = (table.dP @ theta.T).T
    ddq = (table.ddP @ theta.T).T
    v_hi, v_lo = limits.v_hi[:, None], limits.v_lo[:, None]
    a_hi, a_lo = limits.a_hi[:, None], limits.a_lo[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        vel = np.where(dq != 0, np.maximum(v_hi / dq, v_lo / dq), np.inf)
        acc = np.where(ddq != 0, np.sqrt(np.maximum(a_hi / ddq, a_lo / ddq)), np.inf)
    return float(min(vel.min(), acc.min()))


def solve_no_acc(theta, table: GridBasis, limits: JointLimits) -> InnerSolution:
    """Closed-form inner value with velocity limits only.

    ``V = (sum_{i<N} ds_i max_j c_ij)**2``. The direction sums, over grid
    points, the gradient of one maximizing joint term (lowest ``j`` on ties).
    Points where no joint moves have unbounded speed and contribute zero.
    """
    theta = check_theta(theta, table.d)
    dq = (table.dP @ theta.T).T
    cv, vsel = _vel_terms(dq, limits)
    jmax = np.argmax(cv, axis=0)  # first maximizer per point
    idx = np.arange(table.N + 1)
    cmax = cv[jmax, idx]
    ds = table.ds
    S = float(np.sum(ds * cmax[:-1]))
    V = S * S
    direction = np.zeros_like(theta)
    for i in range(table.N):
        if cmax[i] > 0:
            j = jmax[i]
            direction[j] += ds[i] / vsel[j, i] * table.dP[i]
    direction *= 2.0 * S
    with np.errstate(divide="ignore"):
        s2 = np.where(cmax > 0, 1.0 / cmax**2, np.inf)
    active = [(int(i), int(jmax[i]), "v") for i in range(table.N + 1) if cmax[i] > 0]
    return InnerSolution(V, s2, "no_acc", theta, direction=direction, active=active,
                         unbounded=bool(np.any(cmax[:-1] == 0)))


def solve_inner(theta, table: GridBasis, limits: JointLimits, mode: str = "general",
                **opts) -> InnerSolution:
    """Solve the inner problem in ``mode`` and attach the ``theta`` direction."""
    if mode == "general":
        sys = assemble(theta, table, limits)
        sol = solve_general(sys, theta, **opts)
        sol.direction = descent_direction_general(theta, sol, table)
        return sol
    if mode == "const_speed":
        return solve_const_speed(theta, table, limits)
    if mode == "no_acc":
        return solve_no_acc(theta, table, limits)
    raise ValueError(f"unknown inner mode {mode!r}; expected one of {MODES}")


# -- verification oracle -----------------------------------------------------

def _range_min(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """``min(values[lo:hi + 1])`` per query via a sparse table; ``inf`` if empty."""
    G = values.size
    levels = [values]
    while 2 ** len(levels) <= G:
        prev, w = levels[-1], 2 ** (len(levels) - 1)
        levels.append(np.minimum(prev[:-w], prev[w:]))
    out = np.full(lo.shape, np.inf)
    ok = hi >= lo
    l, h = lo[ok], hi[ok]
    k = np.floor(np.log2(h - l + 1)).astype(int)
    res = np.empty(l.size)
    for lev in np.unique(k):
        sel = k == lev
        tab = levels[lev]
        res[sel] = np.minimum(tab[l[sel]], tab[h[sel] - 2 ** lev + 1])
    out[ok] = res
    return out


def brute_force_oracle(sys: ConstraintSystem, resolution: int = 100_000,
                       s2_floor: float = 1e-9, s2_ceiling: float = 1e6, max_N: int = 4) -> float:
    """Dynamic-programming search for the inner optimum on tiny instances.

    Every squared speed is restricted to a geometric grid of ``resolution``
    values between the floor and its single-variable upper bound. Each
    acceleration row couples two neighbours only, so the admissible
    successors of a grid value form an interval and the minimum of
    ``sum ds_i / sqrt(x_i)`` is found by a backward sweep. The result is the
    value of a feasible grid profile, hence an upper bound that tightens as
    the grid is refined. Returns ``inf`` for an infeasible system.
    """
    N = sys.N
    if N > max_N:
        raise ValueError(f"brute force oracle is limited to N <= {max_N}, got N={N}")
    tol = 1e-12
    spd = sys.spd
    hi = np.full(N + 1, float(s2_ceiling))
    for j in range(sys.n):
        pos, neg = spd[j] > 0, spd[j] < 0
        hi[pos] = np.minimum(hi[pos], sys.v_hi2[j] / spd[j][pos])
        hi[neg] = np.minimum(hi[neg], sys.v_lo2[j] / -spd[j][neg])
    if np.any(hi < s2_floor):
        return math.inf
    grids = [np.geomspace(s2_floor, h, resolution) if h > s2_floor else np.array([s2_floor])
             for h in hi]

    J = np.zeros(grids[N].size)
    for i in range(N - 1, -1, -1):
        x, nxt = grids[i], grids[i + 1]
        lo_b = np.full(x.size, -np.inf)
        hi_b = np.full(x.size, np.inf)
        ok = np.ones(x.size, bool)
        for j in range(sys.n):
            r, u = sys.rho[j, i], sys.up[j, i]
            top = sys.a_hi[j] - r * x   # u * y <= top
            bot = sys.a_lo[j] - r * x   # u * y >= bot
            if u > 0:
                hi_b = np.minimum(hi_b, top / u)
                lo_b = np.maximum(lo_b, bot / u)
            elif u < 0:
                hi_b = np.minimum(hi_b, bot / u)
                lo_b = np.maximum(lo_b, top / u)
            else:
                ok &= (top >= -tol) & (bot <= tol)
        lo_b = lo_b - tol * np.abs(lo_b)
        hi_b = hi_b + tol * np.abs(hi_b)
        k_lo = np.searchsorted(nxt, lo_b, side="left")
        k_hi = np.searchsorted(nxt, hi_b, side="right") - 1
        k_lo = np.clip(k_lo, 0, nxt.size)
        best = _range_min(J, k_lo, np.minimum(k_hi, nxt.size - 1))
        J = np.where(ok, sys.ds[i] / np.sqrt(x) + best, np.inf)
    g = float(J.min())
    return g * g if math.isfinite(g) else math.inf

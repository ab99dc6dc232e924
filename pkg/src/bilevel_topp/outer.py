"""Upper-level problem: primal-dual descent over the joint-curve parameters.

The outer Lagrangian is::

    L = V(theta) + sum_c lam_c (E_c(theta) - eps_c)
        + sum_ij mu_ij (p_i theta_j - q_hi_j) - sum_ij nu_ij (p_i theta_j - q_lo_j)

with one multiplier ``lam_c`` per task-error channel. Each iteration takes a
primal step ``theta <- theta - alpha d_O`` where ``d_O`` is the gradient of
``L`` in ``theta`` (the inner direction supplies the ``V`` part), re-solves the
inner problem, and raises each multiplier by ``beta`` times its constraint
value, projected onto the non-negative orthant.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import GridBasis, check_theta
from .inner import MODES, InfeasibleError, InnerSolution, JointLimits, solve_inner
from .kinematics import CartesianPath, ErrorEval, path_error

__all__ = [
    "DualState",
    "OuterConfig",
    "OuterProblem",
    "OptimizationReport",
    "OptimizationError",
    "IterateEval",
    "evaluate",
    "outer_lagrangian",
    "outer_direction",
    "primal_step",
    "dual_step",
    "optimize",
]


class OptimizationError(RuntimeError):
    """The optimizer cannot start from the given parameters."""


@dataclass(frozen=True)
class DualState:
    """Multipliers: ``lam`` per error channel, ``mu``/``nu`` of shape ``(N + 1, n)``."""

    lam: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("lam", "mu", "nu"):
            a = np.array(getattr(self, name), dtype=float)
            if np.any(a < 0) or np.any(np.isnan(a)):
                raise ValueError(f"multiplier {name} must be non-negative")
            object.__setattr__(self, name, a)
        if self.mu.shape != self.nu.shape:
            raise ValueError("mu and nu must have the same shape")

    @classmethod
    def zeros(cls, channels: int, N: int, n: int) -> "DualState":
        return cls(np.zeros(channels), np.zeros((N + 1, n)), np.zeros((N + 1, n)))


@dataclass(frozen=True)
class OuterConfig:
    """Step sizes and stopping rule.

    ``eps`` overrides the path tolerance of every channel when given.
    ``window``/``tol`` stop the loop once the best feasible value has not
    dropped by more than ``tol`` (relative) for ``window`` iterations; set
    ``window=None`` to always run ``max_iters``. ``fixed_lambda`` freezes every
    error multiplier at that value.
    """

    alpha: float = 1e-5
    beta: float = 0.5
    max_iters: int = 8000
    mode: str = "general"
    eps: float | None = None
    window: int | None = 200
    tol: float = 1e-6
    fixed_lambda: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError("max_iters must be a non-negative integer")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be positive or None")
        if self.fixed_lambda is not None and self.fixed_lambda < 0:
            raise ValueError("fixed_lambda must be non-negative")


@dataclass(frozen=True)
class OuterProblem:
    """Everything the optimizer needs besides the starting point."""

    model: object
    table: GridBasis
    path: CartesianPath
    limits: JointLimits
    inner_opts: dict = field(default_factory=dict)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.path.channels)


@dataclass
class IterateEval:
    """Inner solution, error channels and feasibility of one ``theta``."""

    theta: np.ndarray
    inner: InnerSolution
    errors: list[ErrorEval]
    max_core_error: np.ndarray  # per channel
    position_violation: float  # largest p_i theta_j beyond its bound, <= 0 if none
    caps: np.ndarray

    @property
    def value(self) -> float:
        return self.inner.value

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.max_core_error <= self.caps) and self.position_violation <= 0)

    @property
    def violation(self) -> float:
        """Worst relative breach of the error caps or position limits (0 if feasible)."""
        cap_v = float(np.max((self.max_core_error - self.caps) / self.caps))
        return max(0.0, cap_v, self.position_violation)


def _position_violation(theta, table: GridBasis, limits: JointLimits) -> float:
    Q = table.P @ theta.T
    with np.errstate(invalid="ignore"):
        v = np.maximum(Q - limits.q_hi, limits.q_lo - Q)
    v = v[np.isfinite(v)]
    return float(v.max()) if v.size else -math.inf


def evaluate(problem: OuterProblem, theta, mode: str) -> IterateEval:
    """Solve the inner problem and every error channel at ``theta``."""
    theta = check_theta(theta, problem.table.d)
    inner = solve_inner(theta, problem.table, problem.limits, mode, **problem.inner_opts)
    errs, maxerr, caps = [], [], []
    core = problem.path.core
    for name in problem.channel_names:
        e = path_error(theta, problem.model, problem.table, problem.path, name)
        errs.append(e)
        maxerr.append(float(np.max(e.per_point[core])))
        caps.append(problem.path.tolerance(name)[1])
    return IterateEval(theta, inner, errs, np.array(maxerr),
                       _position_violation(theta, problem.table, problem.limits), np.array(caps))


def _as_list(errs) -> list[ErrorEval]:
    return [errs] if isinstance(errs, ErrorEval) else list(errs)


def _eps_vector(eps, count: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(eps, dtype=float), (count,))


def outer_lagrangian(theta, duals: DualState, inner: InnerSolution, errs,
                     limits: JointLimits, table: GridBasis, eps) -> float:
    """Value of the outer Lagrangian at ``theta``.

    ``errs`` is one ``ErrorEval`` or a list with one entry per ``duals.lam``;
    ``eps`` is a scalar or one tolerance per channel.
    """
    theta = check_theta(theta, table.d)
    errs = _as_list(errs)
    eps = _eps_vector(eps, len(errs))
    Q = table.P @ theta.T
    L = inner.value + sum(float(l) * (e.value - t) for l, e, t in zip(duals.lam, errs, eps))
    # zero multipliers on infinite bounds contribute nothing
    with np.errstate(invalid="ignore"):
        up = np.where(duals.mu > 0, duals.mu * (Q - limits.q_hi), 0.0)
        dn = np.where(duals.nu > 0, duals.nu * (Q - limits.q_lo), 0.0)
    return float(L + up.sum() - dn.sum())


def outer_direction(theta, duals: DualState, inner_d, errs, table: GridBasis) -> np.ndarray:
    """Gradient of the outer Lagrangian in ``theta``, shape ``(n, d)``.

    ``inner_d`` is the derivative of ``V`` (inner direction). Moving along
    ``-d_O`` decreases the Lagrangian to first order, so the primal update
    is ``theta - alpha * d_O``.
    """
    theta = check_theta(theta, table.d)
    errs = _as_list(errs)
    d_O = np.array(inner_d, dtype=float).reshape(theta.shape)
    # sum_i (mu_ij - nu_ij) p_i for each joint j
    d_O += ((duals.mu - duals.nu).T @ table.P)
    for lam, e in zip(duals.lam, errs):
        if lam != 0:
            d_O += lam * e.grad_theta
    return d_O


def primal_step(theta, d_O, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    # overflow is left to the caller, which checks for non-finite iterates
    with np.errstate(over="ignore", invalid="ignore"):
        return np.asarray(theta, dtype=float) - alpha * np.asarray(d_O, dtype=float)


def dual_step(duals: DualState, theta, errs, limits: JointLimits, table: GridBasis,
              beta: float, eps, fixed_lambda: float | None = None) -> DualState:
    """Projected ascent on the constraint values at the new ``theta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    theta = check_theta(theta, table.d)
    errs = _as_list(errs)
    eps = _eps_vector(eps, len(errs))
    if fixed_lambda is not None:
        lam = np.full(len(errs), float(fixed_lambda))
    else:
        g = np.array([e.value for e in errs]) - eps
        lam = np.maximum(0.0, duals.lam + beta * g)
    Q = table.P @ theta.T
    with np.errstate(invalid="ignore"):
        mu = np.maximum(0.0, duals.mu + beta * (Q - limits.q_hi))
        nu = np.maximum(0.0, duals.nu + beta * (limits.q_lo - Q))
    return DualState(lam, np.nan_to_num(mu, nan=0.0), np.nan_to_num(nu, nan=0.0))


@dataclass
class OptimizationReport:
    """Outcome of :func:`optimize`.

    ``theta`` is the best feasible iterate (least ``V`` with every core error
    under its cap and positions inside their limits); if no iterate is
    feasible it is the least-violating one and ``feasible`` is False.
    ``history`` maps column names to arrays with one entry per iterate,
    starting with the initial point.
    """

    theta: np.ndarray
    theta0: np.ndarray
    best: IterateEval
    initial: IterateEval
    feasible: bool
    best_iter: int
    iterations: int
    termination: str
    wall_clock: float
    history: dict[str, np.ndarray]
    duals: DualState

    @property
    def value(self) -> float:
        return self.best.value

    @property
    def t_f(self) -> float:
        return math.sqrt(self.best.value)

    @property
    def initial_t_f(self) -> float:
        return math.sqrt(self.initial.value)

    @property
    def improvement(self) -> float:
        return 1.0 - self.t_f / self.initial_t_f if self.initial_t_f > 0 else 0.0


class _History:
    def __init__(self, names):
        self.names = names
        self.rows = []

    def add(self, ev: IterateEval, duals: DualState):
        row = [math.sqrt(ev.value)]
        row += [e.value for e in ev.errors]
        row += list(ev.max_core_error)
        row += [float(np.linalg.norm(duals.lam)), float(np.linalg.norm(duals.mu)),
                float(np.linalg.norm(duals.nu))]
        self.rows.append(row)

    def arrays(self) -> dict[str, np.ndarray]:
        cols = ["t_f"] + [f"E_{c}" for c in self.names] + [f"max_err_{c}" for c in self.names]
        cols += ["lam_norm", "mu_norm", "nu_norm"]
        data = np.array(self.rows, dtype=float).reshape(len(self.rows), len(cols))
        return {c: data[:, k] for k, c in enumerate(cols)}


def _better(a: IterateEval, b: IterateEval | None) -> bool:
    if b is None:
        return True
    if a.feasible != b.feasible:
        return a.feasible
    if a.feasible:
        return a.value < b.value
    return a.violation < b.violation


def optimize(problem: OuterProblem, theta0, config: OuterConfig = OuterConfig(),
             callback: Callable[[int, IterateEval, DualState], None] | None = None
             ) -> OptimizationReport:
    """Primal-dual loop over ``theta`` starting from ``theta0``.

    Each iteration computes ``d_O`` at the current iterate, steps, re-solves
    the inner problem at the new point and updates the multipliers there.

    Raises
    ------
    OptimizationError
        If the inner problem is infeasible at ``theta0``.
    """
    start = time.perf_counter()
    table, limits, path = problem.table, problem.limits, problem.path
    names = problem.channel_names
    eps = np.array([config.eps if config.eps is not None else path.tolerance(c)[0]
                    for c in names])
    try:
        cur = evaluate(problem, theta0, config.mode)
    except InfeasibleError as exc:
        raise OptimizationError(f"inner problem infeasible at the initial parameters: {exc}") from exc
    duals = DualState.zeros(len(names), table.N, cur.theta.shape[0])
    if config.fixed_lambda is not None:
        duals = DualState(np.full(len(names), float(config.fixed_lambda)), duals.mu, duals.nu)
    hist = _History(names)
    hist.add(cur, duals)
    initial = best = cur
    best_iter, last_gain = 0, 0
    termination = "max_iters"
    k = 0
    for k in range(1, config.max_iters + 1):
        d_O = outer_direction(cur.theta, duals, cur.inner.direction, cur.errors, table)
        theta = primal_step(cur.theta, d_O, config.alpha)
        if not np.all(np.isfinite(theta)):
            termination = "non_finite"
            k -= 1
            break
        try:
            nxt = evaluate(problem, theta, config.mode)
        except InfeasibleError:
            termination = "inner_infeasible"
            k -= 1
            break
        if not math.isfinite(nxt.value):
            termination = "non_finite"
            k -= 1
            break
        duals = dual_step(duals, theta, nxt.errors, limits, table, config.beta, eps,
                          config.fixed_lambda)
        cur = nxt
        hist.add(cur, duals)
        if callback is not None:
            callback(k, cur, duals)
        if _better(cur, best):
            if not (best.feasible and cur.feasible) or cur.value < best.value * (1 - config.tol):
                last_gain = k
            best, best_iter = cur, k
        if config.window is not None and best.feasible and k - last_gain >= config.window:
            termination = "no_improvement"
            break
    return OptimizationReport(best.theta, initial.theta, best, initial, best.feasible, best_iter,
                              k, termination, time.perf_counter() - start, hist.arrays(), duals)

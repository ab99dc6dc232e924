"""Forward kinematics, Jacobians, damped least-squares IK and the path error.

Two model families are provided: a planar 3R arm (closed form) and a serial
revolute chain described by standard Denavit-Hartenberg rows. Models expose
batched ``fk_batch`` / ``jacobian_batch`` so that per-grid-point evaluation is
vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .basis import GridBasis, check_theta

__all__ = [
    "Planar3R",
    "DHChain",
    "CartesianPath",
    "ErrorEval",
    "IKError",
    "fk",
    "jacobian",
    "ik_solve",
    "path_error",
    "channel_errors",
]


class IKError(RuntimeError):
    """Damped least squares did not reach the requested residual."""

    def __init__(self, message, q_best=None, residual=math.inf):
        super().__init__(message)
        self.q_best = q_best
        self.residual = residual


@dataclass(frozen=True)
class Planar3R:
    """Planar arm with three revolute joints.

    The full pose is ``(x, y, phi)`` with ``phi = q1 + q2 + q3``. With
    ``heading=False`` only the position ``(x, y)`` is a task coordinate and the
    heading is the redundant (free) variable.
    """

    lengths: tuple[float, float, float] = (2.0, 1.5, 1.0)
    heading: bool = False

    def __post_init__(self):
        lengths = tuple(float(a) for a in self.lengths)
        if len(lengths) != 3 or min(lengths) <= 0:
            raise ValueError("planar 3R needs three positive link lengths")
        object.__setattr__(self, "lengths", lengths)

    n = 3

    @property
    def m(self) -> int:
        return 3 if self.heading else 2

    @property
    def task_dof(self) -> int:
        return self.m

    @property
    def channels(self) -> tuple[tuple[str, int, int], ...]:
        if self.heading:
            return (("position", 0, 2), ("heading", 2, 3))
        return (("position", 0, 2),)

    @property
    def reach(self) -> float:
        return sum(self.lengths)

    def with_heading(self, heading: bool = True) -> "Planar3R":
        return Planar3R(self.lengths, heading)

    def fk_batch(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(Q)
        a1, a2, a3 = self.lengths
        t1 = Q[:, 0]
        t12 = t1 + Q[:, 1]
        t123 = t12 + Q[:, 2]
        x = a1 * np.cos(t1) + a2 * np.cos(t12) + a3 * np.cos(t123)
        y = a1 * np.sin(t1) + a2 * np.sin(t12) + a3 * np.sin(t123)
        if self.heading:
            return np.stack([x, y, t123], axis=1)
        return np.stack([x, y], axis=1)

    def jacobian_batch(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(Q)
        a1, a2, a3 = self.lengths
        t1 = Q[:, 0]
        t12 = t1 + Q[:, 1]
        t123 = t12 + Q[:, 2]
        s3, c3 = a3 * np.sin(t123), a3 * np.cos(t123)
        s2, c2 = a2 * np.sin(t12) + s3, a2 * np.cos(t12) + c3
        s1, c1 = a1 * np.sin(t1) + s2, a1 * np.cos(t1) + c2
        J = np.empty((Q.shape[0], self.m, 3))
        J[:, 0] = np.stack([-s1, -s2, -s3], axis=1)
        J[:, 1] = np.stack([c1, c2, c3], axis=1)
        if self.heading:
            J[:, 2] = 1.0
        return J

    def analytic_ik(self, x: float, y: float, phi: float, elbow: int = 1) -> np.ndarray:
        """Closed-form pose IK; raises ``IKError`` when the wrist is out of reach."""
        a1, a2, a3 = self.lengths
        wx, wy = x - a3 * math.cos(phi), y - a3 * math.sin(phi)
        c2 = (wx * wx + wy * wy - a1 * a1 - a2 * a2) / (2 * a1 * a2)
        if abs(c2) > 1.0:
            raise IKError(f"wrist ({wx:.3f}, {wy:.3f}) out of reach")
        q2 = elbow * math.acos(c2)
        q1 = math.atan2(wy, wx) - math.atan2(a2 * math.sin(q2), a1 + a2 * math.cos(q2))
        return np.array([q1, q2, phi - q1 - q2])


def _dh_transform(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    T = np.zeros(theta.shape + (4, 4))
    T[..., 0, 0] = ct
    T[..., 0, 1] = -st * ca
    T[..., 0, 2] = st * sa
    T[..., 0, 3] = a * ct
    T[..., 1, 0] = st
    T[..., 1, 1] = ct * ca
    T[..., 1, 2] = -ct * sa
    T[..., 1, 3] = a * st
    T[..., 2, 1] = sa
    T[..., 2, 2] = ca
    T[..., 2, 3] = d
    T[..., 3, 3] = 1.0
    return T


@dataclass(frozen=True)
class DHChain:
    """All-revolute serial chain from standard DH rows ``(a, alpha, d, offset)``.

    The task vector is the tool position, optionally followed by the tool
    z-axis (``orientation="axis"``). Tracking only the axis direction leaves
    the rotation about it free.
    """

    rows: tuple[tuple[float, float, float, float], ...]
    orientation: str | None = None

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in r) for r in self.rows)
        if not rows or any(len(r) != 4 for r in rows):
            raise ValueError("DH rows must be (a, alpha, d, offset) tuples")
        if self.orientation not in (None, "axis"):
            raise ValueError(f"unknown orientation channel {self.orientation!r}")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return 6 if self.orientation == "axis" else 3

    @property
    def task_dof(self) -> int:
        """Independent task coordinates (a unit axis has two)."""
        return 5 if self.orientation == "axis" else 3

    @property
    def channels(self) -> tuple[tuple[str, int, int], ...]:
        if self.orientation == "axis":
            return (("position", 0, 3), ("axis", 3, 6))
        return (("position", 0, 3),)

    def frames(self, Q: np.ndarray) -> np.ndarray:
        """Base-to-frame transforms, shape ``(K, n + 1, 4, 4)``."""
        Q = np.atleast_2d(Q)
        K = Q.shape[0]
        out = np.empty((K, self.n + 1, 4, 4))
        out[:, 0] = np.eye(4)
        for k, (a, alpha, d, off) in enumerate(self.rows):
            out[:, k + 1] = out[:, k] @ _dh_transform(a, alpha, d, Q[:, k] + off)
        return out

    def fk_batch(self, Q: np.ndarray) -> np.ndarray:
        F = self.frames(Q)[:, -1]
        if self.orientation == "axis":
            return np.concatenate([F[:, :3, 3], F[:, :3, 2]], axis=1)
        return F[:, :3, 3].copy()

    def jacobian_batch(self, Q: np.ndarray) -> np.ndarray:
        F = self.frames(Q)
        z = F[:, :-1, :3, 2]  # joint axes, (K, n, 3)
        o = F[:, :-1, :3, 3]
        tip = F[:, -1, :3, 3]
        Jp = np.cross(z, tip[:, None, :] - o).transpose(0, 2, 1)
        if self.orientation != "axis":
            return Jp
        axis = F[:, -1, :3, 2]
        Ja = np.cross(z, axis[:, None, :]).transpose(0, 2, 1)
        return np.concatenate([Jp, Ja], axis=1)


def fk(model, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint values, got shape {q.shape}")
    return model.fk_batch(q[None, :])[0]


def jacobian(model, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint values, got shape {q.shape}")
    return model.jacobian_batch(q[None, :])[0]


def ik_solve(model, target, q0, damping: float = 1e-3, max_iter: int = 200,
             tol: float = 1e-8) -> np.ndarray:
    """Damped least-squares IK: ``dq = J^T (J J^T + damping**2 I)^-1 e``."""
    target = np.asarray(target, dtype=float)
    q = np.array(q0, dtype=float)
    best_q, best_r = q.copy(), math.inf
    eye = np.eye(model.m)
    for _ in range(max_iter + 1):
        e = target - fk(model, q)
        r = float(np.linalg.norm(e))
        if r < best_r:
            best_q, best_r = q.copy(), r
        if r <= tol:
            return q
        J = jacobian(model, q)
        q = q + J.T @ np.linalg.solve(J @ J.T + damping**2 * eye, e)
    raise IKError(f"IK did not converge (residual {best_r:.3e})", best_q, best_r)


@dataclass(frozen=True)
class CartesianPath:
    """Desired task-space samples ``points`` with shape ``(N + 1, m)``.

    ``channels`` splits the task columns into separately normed groups, e.g.
    position and tool axis, so that meters and radians never share a norm.
    ``core`` masks the points that count for reported metrics (extensions
    added at the path ends are excluded).
    """

    points: np.ndarray
    norm_p: float = 2
    eps: float = 1e-5
    cap: float = 0.01
    channels: tuple[tuple[str, int, int], ...] = ()
    core: np.ndarray | None = field(default=None)
    tolerances: tuple[tuple[str, float, float], ...] = ()  # (channel, eps, cap)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or not np.all(np.isfinite(pts)):
            raise ValueError("path points must be a finite (N + 1, m) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not (self.norm_p == math.inf or (int(self.norm_p) == self.norm_p and self.norm_p >= 1)):
            raise ValueError("norm_p must be a positive integer or inf")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not self.channels:
            object.__setattr__(self, "channels", (("position", 0, pts.shape[1]),))
        core = np.ones(pts.shape[0], bool) if self.core is None else np.asarray(self.core, bool)
        if core.shape != (pts.shape[0],):
            raise ValueError("core mask must have one entry per path point")
        core.setflags(write=False)
        object.__setattr__(self, "core", core)

    @property
    def m(self) -> int:
        return self.points.shape[1]

    def tolerance(self, name: str) -> tuple[float, float]:
        """``(eps, cap)`` for a channel; the path-wide values unless overridden."""
        for cname, eps, cap in self.tolerances:
            if cname == name:
                return float(eps), float(cap)
        return float(self.eps), float(self.cap)

    def channel(self, name: str) -> tuple[int, int]:
        for cname, lo, hi in self.channels:
            if cname == name:
                return lo, hi
        raise KeyError(name)


class ErrorEval(NamedTuple):
    value: float
    per_point: np.ndarray
    grad_theta: np.ndarray  # shape (n, d)


def _norm_grad(r: np.ndarray, p: float) -> tuple[float, np.ndarray]:
    """Value of the p-norm of ``r >= 0`` and a (sub)gradient with respect to ``r``."""
    if p == math.inf:
        k = int(np.argmax(r))
        E = float(r[k])
        g = np.zeros_like(r)
        if E > 0:
            g[k] = 1.0
        return E, g
    E = float(np.sum(r**p) ** (1.0 / p))
    if E == 0.0:
        return 0.0, np.zeros_like(r)
    return E, (r / E) ** (p - 1)


def path_error(theta, model, table: GridBasis, path: CartesianPath,
               channel: str = "position") -> ErrorEval:
    """Norm of the task-space tracking error and its gradient in ``theta``.

    Points whose error is exactly zero contribute a zero gradient.
    """
    theta = check_theta(theta, table.d)
    if path.points.shape[0] != table.N + 1:
        raise ValueError("path and grid disagree on the number of points")
    lo, hi = path.channel(channel)
    Q = table.P @ theta.T
    e = path.points[:, lo:hi] - model.fk_batch(Q)[:, lo:hi]
    r = np.linalg.norm(e, axis=1)
    E, dE_dr = _norm_grad(r, path.norm_p)
    safe = np.where(r > 0, r, 1.0)
    # dE/dchi_i = -dE/dr_i * e_i / r_i
    g_chi = np.where(r[:, None] > 0, -(dE_dr / safe)[:, None] * e, 0.0)
    J = model.jacobian_batch(Q)[:, lo:hi, :]
    g_q = np.einsum("im,imn->in", g_chi, J)
    return ErrorEval(E, r, g_q.T @ table.P)


def channel_errors(theta, model, table: GridBasis, path: CartesianPath) -> dict[str, ErrorEval]:
    return {name: path_error(theta, model, table, path, name) for name, _, _ in path.channels}


def models_from_config(cfg: dict):
    """Build a kinematic model from a ``[model]`` table of a scenario file."""
    kind = cfg.get("type", "planar3r")
    if kind == "planar3r":
        return Planar3R(tuple(cfg.get("lengths", (2.0, 1.5, 1.0))), bool(cfg.get("heading", False)))
    if kind == "dh":
        rows: Sequence = cfg.get("dh")
        if not rows:
            raise ValueError("model.dh: missing DH table")
        return DHChain(tuple(tuple(r) for r in rows), cfg.get("orientation"))
    raise ValueError(f"model.type: unknown model type {kind!r}")

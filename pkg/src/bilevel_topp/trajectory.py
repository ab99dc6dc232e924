"""Grids, path extension, timing-law reconstruction and trajectory export.

A squared-speed profile on the grid fixes a piecewise constant path
acceleration. On segment ``i`` the path acceleration and duration are::

    sdd_i = (x_{i+1} - x_i) / (2 ds_i)
    t_i   = 2 ds_i / (sdot_i + sdot_{i+1})

which is the exact traversal time under constant acceleration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisSpec, GridBasis, PathGrid, basis_matrices, check_theta
from .inner import JointLimits

__all__ = [
    "TimingLaw",
    "ExtendedPath",
    "LimitReport",
    "StallError",
    "build_grid",
    "extend_path",
    "reconstruct_timing",
    "integrate_timing",
    "traversal_time",
    "validate_limits",
    "sample_trajectory",
    "write_trajectory_csv",
    "write_timing_json",
]


class StallError(ValueError):
    """The path speed vanishes at the start of a segment, so it is never traversed."""


@dataclass(frozen=True)
class TimingLaw:
    """Segment durations ``t``, path accelerations ``sdd`` and start speeds.

    ``sdot`` has one entry per grid point; ``t`` and ``sdd`` one per segment.
    """

    t: np.ndarray
    sdd: np.ndarray
    sdot: np.ndarray

    @property
    def t_f(self) -> float:
        return float(self.knots[-1])

    @property
    def knots(self) -> np.ndarray:
        """Time stamps of the grid points, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.t)])


@dataclass(frozen=True)
class ExtendedPath:
    """Task-space path prolonged at both ends.

    ``core`` is a boolean mask of the original points inside ``points``;
    ``i0`` and ``i1`` are the first and last core indices.
    """

    points: np.ndarray
    grid: PathGrid
    core: np.ndarray
    fraction: float
    leaves_workspace: bool = False

    @property
    def i0(self) -> int:
        return int(np.argmax(self.core))

    @property
    def i1(self) -> int:
        return int(self.core.size - 1 - np.argmax(self.core[::-1]))


def build_grid(N: int) -> PathGrid:
    """Uniform grid ``s_i = i / N``."""
    if int(N) != N or N < 1:
        raise ValueError(f"grid needs N >= 1 segments, got {N}")
    s = np.arange(N + 1, dtype=float) / N
    s[-1] = 1.0
    return PathGrid(s)


def extension_count(n_core_segments: int, fraction: float) -> int:
    """Points added at each end for a given extension fraction."""
    if fraction < 0:
        raise ValueError("extension fraction must be non-negative")
    return int(round(fraction * n_core_segments))


def extend_path(points, grid: PathGrid, fraction: float = 0.1,
                reach: float | None = None) -> ExtendedPath:
    """Prolong a path at both ends by linear extrapolation.

    ``round(fraction * N)`` points are added at each end, continuing the first
    and last segment with the same spacing in ``s``. The combined grid is
    rescaled to ``[0, 1]``.

    Parameters
    ----------
    points : array_like, shape (N + 1, m)
    grid : PathGrid
        Grid on which ``points`` are sampled.
    fraction : float
        Extension length per end relative to the path.
    reach : float, optional
        Workspace radius. Extrapolated points farther than this from the
        origin set ``leaves_workspace`` (the extension is still returned).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] != grid.N + 1:
        raise ValueError("need one path point per grid point")
    k = extension_count(grid.N, fraction)
    if k == 0:
        return ExtendedPath(pts, grid, np.ones(grid.N + 1, bool), float(fraction))
    m = np.arange(1, k + 1, dtype=float)
    head = pts[0] - m[::-1, None] * (pts[1] - pts[0])
    tail = pts[-1] + m[:, None] * (pts[-1] - pts[-2])
    ds0, ds1 = grid.ds[0], grid.ds[-1]
    s = np.concatenate([-m[::-1] * ds0, grid.s, 1.0 + m * ds1])
    s = (s - s[0]) / (s[-1] - s[0])
    s[0], s[-1] = 0.0, 1.0
    core = np.zeros(s.size, bool)
    core[k:k + grid.N + 1] = True
    out = np.vstack([head, pts, tail])
    leaves = False
    if reach is not None:
        ext = np.vstack([head, tail])[:, :2]
        leaves = bool(np.any(np.linalg.norm(ext, axis=1) > reach))
    return ExtendedPath(out, PathGrid(s), core, float(fraction), leaves)


def _check_profile(s2, grid: PathGrid) -> np.ndarray:
    s2 = np.asarray(s2, dtype=float)
    if s2.shape != (grid.N + 1,):
        raise ValueError(f"profile needs {grid.N + 1} entries, got shape {s2.shape}")
    if np.any(s2 < 0) or np.any(np.isnan(s2)):
        raise ValueError("squared path speeds must be non-negative")
    bad = np.nonzero(~(s2[:-1] > 0) | ~np.isfinite(s2[:-1]))[0]
    if bad.size:
        raise StallError(f"path speed is zero or unbounded at segment start {int(bad[0])}")
    if not np.isfinite(s2[-1]):
        raise StallError("final path speed is unbounded")
    return s2


def reconstruct_timing(s2, grid: PathGrid) -> TimingLaw:
    """Timing law generated by the squared speed profile ``s2``."""
    s2 = _check_profile(s2, grid)
    ds = grid.ds
    sd = np.sqrt(s2)
    sdd = (s2[1:] - s2[:-1]) / (2.0 * ds)
    t = 2.0 * ds / (sd[:-1] + sd[1:])
    return TimingLaw(t, sdd, sd)


def integrate_timing(timing: TimingLaw, s0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Run the constant-acceleration law forward; returns grid ``s`` and ``sdot``."""
    N = timing.t.size
    s = np.empty(N + 1)
    sd = np.empty(N + 1)
    s[0], sd[0] = s0, timing.sdot[0]
    for i in range(N):
        ti, a = timing.t[i], timing.sdd[i]
        s[i + 1] = s[i] + sd[i] * ti + 0.5 * a * ti * ti
        sd[i + 1] = sd[i] + a * ti
    return s, sd


def traversal_time(s2, grid: PathGrid) -> float:
    """First-order traversal time ``sum_{i<N} ds_i / sdot_i``."""
    s2 = _check_profile(s2, grid)
    return float(np.sum(grid.ds / np.sqrt(s2[:-1])))


@dataclass(frozen=True)
class LimitReport:
    """Worst relative limit violations per joint (``<= 0`` means satisfied).

    Each array has one entry per joint. Position, velocity and acceleration
    violations are measured relative to the magnitude of the broken bound.
    """

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    rtol: float

    @property
    def worst(self) -> float:
        return float(max(self.position.max(), self.velocity.max(), self.acceleration.max()))

    @property
    def ok(self) -> bool:
        return self.worst <= self.rtol


def _rel_violation(val, lo, hi):
    """``max((val - hi) / |hi|, (lo - val) / |lo|)`` per joint.

    Bounds smaller than 1 in magnitude are treated as absolute; infinite
    bounds never bind.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where(np.isfinite(hi), (val - hi) / np.maximum(np.abs(hi), 1.0), -np.inf)
        dn = np.where(np.isfinite(lo), (lo - val) / np.maximum(np.abs(lo), 1.0), -np.inf)
    return np.maximum(up, dn).max(axis=0)


def validate_limits(theta, table: GridBasis, s2, limits: JointLimits,
                    rtol: float = 1e-6) -> LimitReport:
    """Joint positions, velocities and accelerations implied by ``theta`` and ``s2``.

    ``qd_ij = q'_ij sdot_i`` on every grid point and
    ``qdd_ij = q''_ij x_i + q'_ij sdd_i`` on every segment start.
    """
    theta = check_theta(theta, table.d)
    s2 = np.asarray(s2, dtype=float)
    Q = table.P @ theta.T
    dQ = table.dP @ theta.T
    ddQ = table.ddP @ theta.T
    pos = _rel_violation(Q, limits.q_lo, limits.q_hi)
    if not np.any(dQ) and not np.any(ddQ):
        zero = np.full(theta.shape[0], -np.inf)
        return LimitReport(pos, zero, zero.copy(), rtol)
    timing = reconstruct_timing(s2, table.grid)
    qd = dQ * timing.sdot[:, None]
    qdd = ddQ[:-1] * s2[:-1, None] + dQ[:-1] * timing.sdd[:, None]
    vel = _rel_violation(qd, limits.v_lo, limits.v_hi)
    acc = _rel_violation(qdd, limits.a_lo, limits.a_hi)
    return LimitReport(pos, vel, acc, rtol)


def sample_trajectory(theta, spec: BasisSpec, timing: TimingLaw, grid: PathGrid,
                      dt: float = 0.002) -> tuple[np.ndarray, np.ndarray]:
    """Joint positions at times ``0, dt, 2 dt, ...`` up to and including ``t_f``.

    Returns ``(times, Q)`` with ``Q`` of shape ``(len(times), n)``.
    """
    if not dt > 0:
        raise ValueError("sample period must be positive")
    theta = check_theta(theta, spec.d)
    knots = timing.knots
    t_f = knots[-1]
    times = np.arange(0.0, t_f, dt)
    if times.size == 0 or t_f - times[-1] > 1e-12 * max(t_f, 1.0):
        times = np.append(times, t_f)
    else:
        times[-1] = t_f
    seg = np.clip(np.searchsorted(knots, times, side="right") - 1, 0, grid.N - 1)
    tau = times - knots[seg]
    s = grid.s[seg] + timing.sdot[seg] * tau + 0.5 * timing.sdd[seg] * tau**2
    s = np.clip(s, 0.0, 1.0)
    s[-1] = 1.0
    P, _, _ = basis_matrices(spec, s)
    return times, P @ theta.T


def write_trajectory_csv(path, times, Q) -> Path:
    """CSV with header ``t,q1,...,qn`` and 9 significant digits."""
    path = Path(path)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    header = ",".join(["t"] + [f"q{j + 1}" for j in range(Q.shape[1])])
    np.savetxt(path, np.column_stack([times, Q]), delimiter=",", fmt="%.9g",
               header=header, comments="")
    return path


def write_timing_json(path, timing: TimingLaw, grid: PathGrid) -> Path:
    path = Path(path)
    doc = {
        "t_f": timing.t_f,
        "s": grid.s.tolist(),
        "sdot": timing.sdot.tolist(),
        "segment_time": timing.t.tolist(),
        "sdd": timing.sdd.tolist(),
    }
    path.write_text(json.dumps(doc, indent=1))
    return path

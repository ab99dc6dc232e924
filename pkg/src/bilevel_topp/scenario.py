"""Scenario files, the built-in edge-curve generator and seeded initial curves.

A scenario is a TOML file. Only ``[model]`` and ``[limits]`` are required;
every other field has a default::

    name = "fan_blade_3r"
    seed = 0
    N = 500                      # grid segments, extension included
    mode = "general"             # general | const_speed | no_acc

    [model]
    type = "planar3r"            # or "dh" with dh = [[a, alpha, d, offset], ...]
    lengths = [2.0, 1.5, 1.0]

    [limits]
    velocity = [1.75, 1.57, 1.0]         # symmetric, or velocity_lo / velocity_hi
    acceleration = [35.0, 31.4, 20.0]    # symmetric, or acceleration_lo / _hi
    # position_lo / position_hi default to unbounded

    [path]
    generator = "edge"           # or file = "points.csv" (one x,y[,...] row per point)
    control_points = [[2.1, -0.6], [1.9, -0.2], [1.9, 0.2], [2.1, 0.6]]
    extension = 0.1
    eps = 1e-5
    cap = 0.01
    norm = 2                     # or "inf"

    [basis]
    d = 6

    [optimizer]
    alpha = 1e-5
    beta = 0.5
    iterations = 8000
    window = 200                 # 0 disables the no-improvement stop
    tol = 1e-6
    # fixed_lambda = 10.0

    [path.tolerances.axis]       # per-channel override (DH models with a tool axis)
    eps = 1e-4
    cap = 0.0175

    [init]
    free_variable = "uniform"    # uniform heading in [0, 2 pi), a number, or "normal"
    elbow = 1
    sigma = 2.0                  # spread of the "normal" joint seed
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import BasisSpec, fit_parameters, tabulate
from .inner import JointLimits
from .kinematics import CartesianPath, IKError, Planar3R, ik_solve, models_from_config
from .outer import OuterConfig, OuterProblem
from .trajectory import build_grid, extend_path, extension_count

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "Scenario",
    "ScenarioError",
    "InitError",
    "EdgeCurve",
    "InitDraw",
    "DEFAULT_EDGE",
    "load_scenario",
    "parse_scenario",
    "generate_edge_path",
    "core_segments",
    "build_problem",
    "random_free_variable_init",
]

DEFAULT_EDGE = ((2.1, -0.6), (1.9, -0.2), (1.9, 0.2), (2.1, 0.6))


class ScenarioError(ValueError):
    """Scenario file failed to parse or validate; the message names the field."""


class InitError(RuntimeError):
    """Inverse kinematics failed while building an initial curve."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class EdgeCurve:
    """Cubic Bezier curve sampled uniformly in arc length."""

    control_points: tuple = DEFAULT_EDGE

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        if cp.shape[0] != 4 or cp.ndim != 2 or not np.all(np.isfinite(cp)):
            raise ValueError("edge curve needs four finite control points")
        if np.max(np.linalg.norm(cp - cp[0], axis=1)) < 1e-9:
            raise ValueError("edge curve control points are degenerate (all coincide)")
        object.__setattr__(self, "control_points", tuple(map(tuple, cp)))

    def bezier(self, u) -> np.ndarray:
        cp = np.asarray(self.control_points)
        u = np.asarray(u, dtype=float)[:, None]
        w = np.hstack([(1 - u) ** 3, 3 * u * (1 - u) ** 2, 3 * u**2 * (1 - u), u**3])
        return w @ cp


@dataclass(frozen=True)
class Scenario:
    name: str
    model: object
    limits: JointLimits
    N: int = 500
    basis: BasisSpec = BasisSpec(6)
    mode: str = "general"
    optimizer: OuterConfig = OuterConfig()
    seed: int = 0
    eps: float = 1e-5
    cap: float = 0.01
    norm_p: float = 2
    extension: float = 0.1
    tolerances: tuple = ()
    edge: EdgeCurve | None = EdgeCurve()
    path_points: np.ndarray | None = None  # from a file, sampled on the core grid
    free_variable: object = "uniform"
    elbow: int = 1
    sigma: float = 2.0
    source: str = ""
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.model.n

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with top-level fields or optimizer fields (``alpha``, ...) replaced."""
        opt_keys = set(OuterConfig.__dataclass_fields__)
        opt = {k: kw.pop(k) for k in list(kw) if k in opt_keys and k != "mode"}
        sc = replace(self, **kw)
        if "mode" in kw:
            opt["mode"] = kw["mode"]
        if opt:
            sc = replace(sc, optimizer=replace(sc.optimizer, **opt))
        return sc


def _get(table: dict, key: str, where: str, default=None, required=False):
    if key in table:
        return table[key]
    if required:
        raise ScenarioError(f"{where}.{key}: missing required field")
    return default


def _floats(value, where, n=None):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: expected numbers ({exc})") from None
    a = np.atleast_1d(a)
    if n is not None and a.size not in (1, n):
        raise ScenarioError(f"{where}: expected {n} values, got {a.size}")
    return np.broadcast_to(a, (n,)).copy() if n is not None else a


def _limits(tab: dict, n: int) -> JointLimits:
    where = "limits"
    if not tab:
        raise ScenarioError("limits: missing required table")

    def pair(name):
        sym = tab.get(name)
        lo, hi = tab.get(f"{name}_lo"), tab.get(f"{name}_hi")
        if sym is not None:
            v = _floats(sym, f"{where}.{name}", n)
            if np.any(v <= 0):
                raise ScenarioError(f"{where}.{name}: symmetric limits must be positive")
            return -v, v
        if lo is None or hi is None:
            raise ScenarioError(f"{where}.{name}: missing (give {name} or {name}_lo and {name}_hi)")
        return _floats(lo, f"{where}.{name}_lo", n), _floats(hi, f"{where}.{name}_hi", n)

    v_lo, v_hi = pair("velocity")
    a_lo, a_hi = pair("acceleration")
    q_lo = _floats(tab.get("position_lo", -np.inf), f"{where}.position_lo", n)
    q_hi = _floats(tab.get("position_hi", np.inf), f"{where}.position_hi", n)
    try:
        return JointLimits(q_lo, q_hi, v_lo, v_hi, a_lo, a_hi)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def parse_scenario(doc: dict, source: str = "", base_dir: Path | None = None) -> Scenario:
    """Validate a parsed scenario document."""
    try:
        model = models_from_config(_get(doc, "model", "", required=True))
    except ScenarioError:
        raise ScenarioError("model: missing required table") from None
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from None
    n = model.n
    if n <= _task_dim(model):
        raise ScenarioError(f"model: {n} joints do not exceed the {_task_dim(model)} task coordinates")
    limits = _limits(doc.get("limits", {}), n)

    N = _get(doc, "N", "", 500)
    if not isinstance(N, int) or N < 2:
        raise ScenarioError("N: must be an integer >= 2")
    mode = _get(doc, "mode", "", "general").replace("-", "_")

    path = doc.get("path", {})
    extension = float(_get(path, "extension", "path", 0.1))
    if extension < 0:
        raise ScenarioError("path.extension: must be non-negative")
    eps = float(_get(path, "eps", "path", 1e-5))
    cap = float(_get(path, "cap", "path", 0.01))
    if eps < 0 or cap <= 0:
        raise ScenarioError("path.eps/path.cap: eps must be >= 0 and cap > 0")
    tolerances = []
    for cname, tol in path.get("tolerances", {}).items():
        if cname not in [c for c, _, _ in model.channels]:
            raise ScenarioError(f"path.tolerances.{cname}: model has no such channel")
        try:
            tolerances.append((cname, float(tol.get("eps", eps)), float(tol.get("cap", cap))))
        except (AttributeError, TypeError, ValueError):
            raise ScenarioError(f"path.tolerances.{cname}: expected a table with eps and cap") from None
    norm = _get(path, "norm", "path", 2)
    norm_p = math.inf if str(norm).lower() in ("inf", "infinity") else norm
    if not (norm_p == math.inf or (isinstance(norm_p, int) and norm_p >= 1)):
        raise ScenarioError("path.norm: must be a positive integer or 'inf'")
    edge, points = None, None
    if "file" in path:
        fname = Path(path["file"])
        if base_dir is not None and not fname.is_absolute():
            fname = base_dir / fname
        try:
            points = np.loadtxt(fname, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ScenarioError(f"path.file: cannot read {fname} ({exc})") from None
        if points.shape[1] != model.m:
            raise ScenarioError(f"path.file: expected {model.m} columns, got {points.shape[1]}")
    else:
        gen = _get(path, "generator", "path", "edge")
        if gen != "edge":
            raise ScenarioError(f"path.generator: unknown generator {gen!r}")
        try:
            edge = EdgeCurve(tuple(map(tuple, _get(path, "control_points", "path", DEFAULT_EDGE))))
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"path.control_points: {exc}") from None

    d = _get(doc.get("basis", {}), "d", "basis", 6)
    try:
        basis = BasisSpec(d)
    except ValueError as exc:
        raise ScenarioError(f"basis.d: {exc}") from None

    opt = doc.get("optimizer", {})
    window = _get(opt, "window", "optimizer", 200)
    try:
        config = OuterConfig(
            alpha=float(_get(opt, "alpha", "optimizer", 1e-5)),
            beta=float(_get(opt, "beta", "optimizer", 0.5)),
            max_iters=int(_get(opt, "iterations", "optimizer", 8000)),
            mode=mode,
            eps=None,
            window=int(window) or None,
            tol=float(_get(opt, "tol", "optimizer", 1e-6)),
            fixed_lambda=_get(opt, "fixed_lambda", "optimizer", None),
        )
    except ValueError as exc:
        raise ScenarioError(f"optimizer: {exc}") from None

    init = doc.get("init", {})
    free = _get(init, "free_variable", "init", "uniform")
    if not (free in ("uniform", "normal") or isinstance(free, (int, float))):
        raise ScenarioError("init.free_variable: expected 'uniform', 'normal' or a number")
    elbow = int(_get(init, "elbow", "init", 1))
    if elbow not in (-1, 1):
        raise ScenarioError("init.elbow: must be 1 or -1")
    return Scenario(
        name=str(_get(doc, "name", "", Path(source).stem or "scenario")),
        model=model, limits=limits, N=N, basis=basis, mode=mode, optimizer=config,
        seed=int(_get(doc, "seed", "", 0)), eps=eps, cap=cap, norm_p=norm_p,
        extension=extension, tolerances=tuple(tolerances), edge=edge, path_points=points, free_variable=free,
        elbow=elbow, sigma=float(_get(init, "sigma", "init", 2.0)), source=source, raw=doc,
    )


def load_scenario(path) -> Scenario:
    """Read and validate a TOML scenario file.

    Raises
    ------
    ScenarioError
        On syntax errors (with the line reported by the parser) or invalid
        fields (named as ``table.field``).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_scenario(doc, str(path), path.parent)


def _task_dim(model) -> int:
    return model.task_dof


def generate_edge_path(curve: EdgeCurve = EdgeCurve(), n_points: int = 501,
                       table_size: int = 20001) -> np.ndarray:
    """Points spaced uniformly in arc length along the Bezier edge curve.

    Arc length is tabulated on ``table_size`` parameter values (independent of
    ``n_points``) and inverted by linear interpolation, so different sample
    counts agree exactly at shared arc-length fractions.
    """
    if n_points < 2:
        raise ValueError("need at least two path points")
    u = np.linspace(0.0, 1.0, table_size)
    pts = curve.bezier(u)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    if arc[-1] <= 1e-9:
        raise ValueError("edge curve has zero length")
    frac = np.arange(n_points, dtype=float) / (n_points - 1)
    frac[-1] = 1.0
    return curve.bezier(np.interp(frac * arc[-1], arc, u))


def core_segments(N: int, fraction: float) -> int:
    """Core segment count whose extension brings the grid to ``N`` segments."""
    guess = int(round(N / (1.0 + 2.0 * fraction)))
    for c in sorted(range(max(1, guess - 3), guess + 4), key=lambda c: abs(c - guess)):
        if c + 2 * extension_count(c, fraction) == N:
            return c
    raise ScenarioError(f"N={N} cannot be split into a core path plus a {fraction:.0%} extension")


def build_problem(sc: Scenario) -> OuterProblem:
    """Grid, extended path and basis table for a scenario."""
    if sc.path_points is not None:
        core_pts = sc.path_points
        Nc = core_pts.shape[0] - 1
    else:
        Nc = core_segments(sc.N, sc.extension)
        core_pts = generate_edge_path(sc.edge, Nc + 1)
    ext = extend_path(core_pts, build_grid(Nc), sc.extension, reach=_reach(sc.model))
    table = tabulate(sc.basis, ext.grid)
    path = CartesianPath(ext.points, sc.norm_p, sc.eps, sc.cap, channels=sc.model.channels,
                         core=ext.core, tolerances=sc.tolerances)
    return OuterProblem(sc.model, table, path, sc.limits)


def _reach(model) -> float | None:
    return model.reach if isinstance(model, Planar3R) else None


@dataclass(frozen=True)
class InitDraw:
    """Initial parameters with the seed and the drawn free variable."""

    theta: np.ndarray
    seed: int
    free_variable: float | None
    fit_error: float


def random_free_variable_init(sc: Scenario, problem: OuterProblem, seed: int,
                              free_value: float | None = None) -> InitDraw:
    """Initial ``theta`` from a random choice of the redundant coordinate.

    Planar arms draw a constant heading ``phi ~ U[0, 2 pi)`` (or use
    ``free_value``), solve the pose IK at every grid point and fit the basis.
    With ``free_variable = "normal"`` (any model) the first grid point is
    solved from a joint seed drawn from ``N(0, sigma**2)``, and each further
    point is seeded with the previous solution.

    Raises
    ------
    InitError
        When IK fails at a grid point; the index is attached.
    """
    rng = np.random.default_rng(seed)
    pts = problem.path.points
    s = problem.table.grid.s
    free = sc.free_variable if free_value is None else float(free_value)
    phi = None
    if isinstance(sc.model, Planar3R) and free != "normal":
        phi = float(rng.uniform(0.0, 2.0 * math.pi)) if free == "uniform" else float(free)
        pose_model = sc.model.with_heading(True)
        Q = np.empty((pts.shape[0], 3))
        for i, (x, y) in enumerate(pts[:, :2]):
            target = np.array([x, y, phi])
            try:
                seed_q = sc.model.analytic_ik(x, y, phi, sc.elbow)
                Q[i] = ik_solve(pose_model, target, seed_q)
            except IKError as exc:
                raise InitError(f"IK failed at grid point {i} (s={s[i]:.4f}, heading {phi:.4f}): {exc}",
                                i) from None
    else:
        q = rng.normal(0.0, sc.sigma, size=sc.model.n)
        Q = np.empty((pts.shape[0], sc.model.n))
        for i, target in enumerate(pts):
            try:
                q = ik_solve(sc.model, target, q, max_iter=500)
            except IKError as exc:
                raise InitError(f"IK failed at grid point {i} (s={s[i]:.4f}): {exc}", i) from None
            Q[i] = q
    Q = np.unwrap(Q, axis=0)
    fit = fit_parameters(s, Q, sc.basis)
    return InitDraw(fit.theta, int(seed), phi, fit.max_abs_error)

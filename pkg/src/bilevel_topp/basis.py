"""Polynomial joint-curve parameterization over a normalized path coordinate.

Each joint curve is ``q_j(s) = p(s) @ theta[j]`` where ``p`` is the monomial
row ``[1, s, s**2, ..., s**(d-1)]`` and ``s`` runs over ``[0, 1]``.
``theta`` is stored joint-major with shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "BasisSpec",
    "BasisRow",
    "PathGrid",
    "GridBasis",
    "SingularFitError",
    "FitResult",
    "eval_basis",
    "basis_matrices",
    "tabulate",
    "joint_state",
    "joint_curves",
    "fit_parameters",
    "check_theta",
]


class SingularFitError(np.linalg.LinAlgError):
    """Least-squares design matrix does not have full column rank."""


@dataclass(frozen=True)
class BasisSpec:
    """Monomial basis with ``d`` terms (polynomial degree ``d - 1``)."""

    d: int = 6

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"basis needs at least 2 terms, got d={self.d}")

    @property
    def degree(self) -> int:
        return self.d - 1


@dataclass(frozen=True)
class BasisRow:
    s: float
    p: np.ndarray
    dp: np.ndarray
    ddp: np.ndarray


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("path coordinate must lie in [0, 1]")
    return s


def basis_matrices(spec: BasisSpec, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows of ``p``, ``p'`` and ``p''`` for every entry of ``s``.

    Returns three arrays of shape ``(len(s), d)``.
    """
    s = np.atleast_1d(_check_s(s))
    k = np.arange(spec.d, dtype=float)
    # s**(k-1) with the k=0 column left at zero (0 * anything)
    P = s[:, None] ** k
    dP = np.zeros_like(P)
    dP[:, 1:] = k[1:] * P[:, :-1]
    ddP = np.zeros_like(P)
    ddP[:, 2:] = k[2:] * (k[2:] - 1.0) * P[:, :-2]
    return P, dP, ddP


def eval_basis(spec: BasisSpec, s: float) -> BasisRow:
    """Evaluate the basis and its first two path derivatives at ``s``."""
    if np.ndim(s) != 0:
        raise ValueError("eval_basis takes a scalar path coordinate")
    P, dP, ddP = basis_matrices(spec, [s])
    return BasisRow(float(s), P[0], dP[0], ddP[0])


@dataclass(frozen=True)
class PathGrid:
    """Discretization ``0 = s_0 < s_1 < ... < s_N = 1``."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("grid needs at least two points")
        if s[0] != 0.0 or s[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(s) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def N(self) -> int:
        return self.s.size - 1

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.s)


@dataclass(frozen=True)
class GridBasis:
    """Basis rows tabulated on every grid point.

    ``P``, ``dP`` and ``ddP`` have shape ``(N + 1, d)``.
    """

    spec: BasisSpec
    grid: PathGrid
    P: np.ndarray
    dP: np.ndarray
    ddP: np.ndarray

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def ds(self) -> np.ndarray:
        return self.grid.ds


def tabulate(spec: BasisSpec, grid: PathGrid) -> GridBasis:
    P, dP, ddP = basis_matrices(spec, grid.s)
    for a in (P, dP, ddP):
        a.setflags(write=False)
    return GridBasis(spec, grid, P, dP, ddP)


def check_theta(theta, d: int | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] < 1:
        raise ValueError(f"theta must be an (n, d) matrix, got shape {theta.shape}")
    if d is not None and theta.shape[1] != d:
        raise ValueError(f"theta has {theta.shape[1]} coefficients per joint, basis has {d}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta has non-finite entries")
    return theta


def joint_state(theta, row: BasisRow, j: int) -> tuple[float, float, float]:
    """Position and path derivatives ``(q, dq/ds, d2q/ds2)`` of joint ``j``.

    ``j`` is a zero-based joint index.
    """
    theta = check_theta(theta, row.p.size)
    if not 0 <= j < theta.shape[0]:
        raise IndexError(f"joint index {j} out of range for {theta.shape[0]} joints")
    th = theta[j]
    return float(row.p @ th), float(row.dp @ th), float(row.ddp @ th)


def joint_curves(theta, table: GridBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``q``, ``q'`` and ``q''`` on the grid, each of shape ``(N + 1, n)``."""
    theta = check_theta(theta, table.d)
    return table.P @ theta.T, table.dP @ theta.T, table.ddP @ theta.T


class FitResult(NamedTuple):
    theta: np.ndarray
    residual: np.ndarray  # per-joint sum of squared residuals
    max_abs_error: float


def fit_parameters(s, q, spec: BasisSpec, rcond: float = 1e-12) -> FitResult:
    """Least-squares fit of ``theta`` to joint samples.

    Parameters
    ----------
    s : array_like, shape (K,)
        Distinct sample locations in ``[0, 1]``.
    q : array_like, shape (K, n)
        Joint values at each sample.
    spec : BasisSpec
    rcond : float
        Relative threshold on the diagonal of ``R`` below which the design
        matrix is treated as rank deficient.

    Returns
    -------
    FitResult
        ``theta`` of shape ``(n, d)``, per-joint squared residuals and the
        largest absolute residual over all samples.
    """
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if s.ndim != 1 or q.shape[0] != s.size:
        raise ValueError("need one joint vector per sample location")
    if s.size < spec.d:
        raise SingularFitError(f"{s.size} samples cannot determine {spec.d} coefficients")
    P, _, _ = basis_matrices(spec, s)
    Q, R = np.linalg.qr(P)
    diag = np.abs(np.diag(R))
    if diag.min() <= rcond * max(diag.max(), 1.0):
        raise SingularFitError("design matrix is rank deficient (repeated sample locations?)")
    theta = solve_triangular(R, Q.T @ q).T
    res = q - P @ theta.T
    return FitResult(theta, np.sum(res**2, axis=0), float(np.max(np.abs(res))))

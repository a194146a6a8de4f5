"""Cubic B-spline bases on [0, 1] and their orthonormalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import RankDeficientBasis, TimeOutOfRange

DEGREE = 3
DEFAULT_GRID_SIZE = 1001


@dataclass(frozen=True)
class SplineBasisSpec:
    """Cubic B-spline basis with ``n_basis`` functions on a clamped knot vector.

    Interior knots default to ``n_basis - 4`` equally spaced points in (0, 1).
    """

    n_basis: int
    interior_knots: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_basis < DEGREE + 1:
            raise ValueError(f"need at least {DEGREE + 1} basis functions, got {self.n_basis}")
        if self.interior_knots is None:
            m = self.n_basis - DEGREE - 1
            object.__setattr__(self, "interior_knots", tuple(np.arange(1, m + 1) / (m + 1)))
        knots = np.asarray(self.interior_knots, dtype=float)
        if len(knots) != self.n_basis - DEGREE - 1:
            raise ValueError("number of interior knots must equal n_basis - 4")
        if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] <= 0 or knots[-1] >= 1):
            raise ValueError("interior knots must be strictly increasing inside (0, 1)")

    @property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector of length ``n_basis + 4``."""
        return np.concatenate([np.zeros(DEGREE + 1), self.interior_knots, np.ones(DEGREE + 1)])


def _check_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    bad = ~((t >= 0.0) & (t <= 1.0))
    if np.any(bad):
        raise TimeOutOfRange(f"time {t[bad][0]!r} outside [0, 1]")
    return t


def bspline_matrix(times, spec: SplineBasisSpec) -> np.ndarray:
    """Raw cubic B-spline values, one row per time.

    Returns
    -------
    ndarray of shape (len(times), spec.n_basis)
    """
    t = _check_times(times)
    if t.size == 0:
        return np.zeros((0, spec.n_basis))
    return BSpline.design_matrix(t, spec.knots, DEGREE).toarray()


@dataclass(frozen=True)
class OrthonormalBasis:
    """Raw B-splines times an upper-triangular transform, orthonormal on ``grid``.

    ``transform`` is the inverse of the (positive-diagonal) R factor of the
    thin QR decomposition of the grid evaluations scaled by ``1/sqrt(G)``,
    so that ``mean_g phi_j(g) phi_l(g) = delta_jl``.
    """

    spec: SplineBasisSpec
    transform: np.ndarray
    grid: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.spec.n_basis

    def __call__(self, times) -> np.ndarray:
        return evaluate(self, times)


def orthonormalize(spec: SplineBasisSpec, grid_size: int = DEFAULT_GRID_SIZE) -> OrthonormalBasis:
    if grid_size < 10 * spec.n_basis:
        raise ValueError(f"grid_size must be at least 10 * n_basis = {10 * spec.n_basis}")
    grid = np.linspace(0.0, 1.0, grid_size)
    X = bspline_matrix(grid, spec) / np.sqrt(grid_size)
    _, R = np.linalg.qr(X)
    d = np.diag(R)
    if np.min(np.abs(d)) <= 1e-12 * np.max(np.abs(d)):
        raise RankDeficientBasis("B-spline grid evaluations are rank deficient")
    R = R * np.sign(d)[:, None]
    transform = np.linalg.solve(R, np.eye(spec.n_basis))
    transform = np.triu(transform)
    transform.setflags(write=False)
    grid.setflags(write=False)
    return OrthonormalBasis(spec=spec, transform=transform, grid=grid)


def evaluate(basis: OrthonormalBasis, times) -> np.ndarray:
    """Orthonormal basis values at ``times``; shape ``(len(times), Q)``."""
    return bspline_matrix(times, basis.spec) @ basis.transform


def make_basis(n_basis: int, grid_size: int = DEFAULT_GRID_SIZE) -> OrthonormalBasis:
    """Orthonormal cubic basis with equally spaced interior knots."""
    return orthonormalize(SplineBasisSpec(n_basis), grid_size)


def gram(values: np.ndarray) -> np.ndarray:
    """Discrete Gram matrix ``values.T @ values / G`` under uniform weights."""
    return values.T @ values / values.shape[0]

"""Constrained Cholesky factor of the FPC score covariance.

The score covariance ``Sigma = L L^T`` must be positive definite with a
diagonal covariance inside each block and arbitrary covariance across
blocks.  ``L`` is built from an unconstrained vector:

* diagonal entries ``L_jj = exp(diag_scale * o_j + diag_shift)``;
* cross-block lower-triangular entries are copied verbatim;
* within-block off-diagonal entries follow from the Crout recursion so that
  ``(L L^T)_ij = 0`` for ``i != j`` in the same block.

Free-parameter order: all diagonal parameters (block order, then component
order), then the cross-block entries of the lower triangle, row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch

DIAG_SCALE = 0.5
DIAG_SHIFT = 2.0


@dataclass(frozen=True)
class BlockStructure:
    """Number of components ``K_p`` of each block."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError("every block needs at least one component")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @cached_property
    def block_of(self) -> np.ndarray:
        """Block index of every component."""
        return np.repeat(np.arange(self.n_blocks), self.sizes)

    def slice(self, p: int) -> slice:
        return slice(int(self.offsets[p]), int(self.offsets[p + 1]))

    def indices(self, blocks) -> np.ndarray:
        """Component indices belonging to the given blocks, in order."""
        parts = [np.arange(self.offsets[p], self.offsets[p + 1]) for p in sorted(blocks)]
        return np.concatenate(parts).astype(int) if parts else np.zeros(0, dtype=int)

    @cached_property
    def cross_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices of free cross-block entries, row-major."""
        rows, cols = [], []
        b = self.block_of
        for i in range(self.total):
            for j in range(i):
                if b[j] < b[i]:
                    rows.append(i)
                    cols.append(j)
        return np.array(rows, dtype=int), np.array(cols, dtype=int)

    @cached_property
    def within_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices of Crout-determined within-block entries, in
        computation order."""
        rows, cols = [], []
        b = self.block_of
        for i in range(self.total):
            for j in range(i):
                if b[j] == b[i]:
                    rows.append(i)
                    cols.append(j)
        return np.array(rows, dtype=int), np.array(cols, dtype=int)

    @cached_property
    def within_mask(self) -> np.ndarray:
        """Boolean K x K mask of entries lying inside a diagonal block."""
        b = self.block_of
        return b[:, None] == b[None, :]


def count_unconstrained(structure: BlockStructure) -> int:
    """Number of free parameters: one per diagonal entry plus every
    cross-block entry of the lower triangle."""
    return structure.total + len(structure.cross_index[0])


@dataclass(frozen=True)
class ConstrainedCholesky:
    structure: BlockStructure
    L: np.ndarray

    @property
    def unconstrained_dim(self) -> int:
        return count_unconstrained(self.structure)


@dataclass(frozen=True)
class ScoreCovariance:
    sigma: np.ndarray
    S: np.ndarray
    R: np.ndarray


def factor_matrix(
    unconstrained: np.ndarray,
    structure: BlockStructure,
    diag_scale: float = DIAG_SCALE,
    diag_shift: float = DIAG_SHIFT,
) -> np.ndarray:
    """Lower-triangular ``L`` as a bare array (see :func:`build_factor`)."""
    v = np.asarray(unconstrained, dtype=float)
    K = structure.total
    if v.shape != (count_unconstrained(structure),):
        raise DimensionMismatch(f"expected {count_unconstrained(structure)} unconstrained values, got shape {v.shape}")
    L = np.zeros((K, K))
    idx = np.arange(K)
    L[idx, idx] = np.exp(diag_scale * v[:K] + diag_shift)
    rows, cols = structure.cross_index
    L[rows, cols] = v[K:]
    for i, j in zip(*structure.within_index):
        L[i, j] = -(L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def factor_vjp(
    L: np.ndarray,
    L_bar: np.ndarray,
    structure: BlockStructure,
    diag_scale: float = DIAG_SCALE,
) -> np.ndarray:
    """Pull an adjoint ``dF/dL`` back to the unconstrained coordinates.

    ``L`` must be the output of :func:`factor_matrix`; only the lower
    triangle of ``L_bar`` is used.
    """
    K = structure.total
    Lb = np.tril(L_bar).astype(float, copy=True)
    rows, cols = structure.within_index
    for i, j in zip(rows[::-1], cols[::-1]):
        g = Lb[i, j]
        if g == 0.0:
            continue
        # L_ij = -s / L_jj with s = L[i, :j] . L[j, :j]
        Lb[j, j] -= g * L[i, j] / L[j, j]
        s_bar = -g / L[j, j]
        Lb[i, :j] += s_bar * L[j, :j]
        Lb[j, :j] += s_bar * L[i, :j]
    idx = np.arange(K)
    out = np.empty(count_unconstrained(structure))
    out[:K] = Lb[idx, idx] * L[idx, idx] * diag_scale
    r, c = structure.cross_index
    out[K:] = Lb[r, c]
    return out


def build_factor(
    unconstrained,
    structure: BlockStructure,
    diag_scale: float = DIAG_SCALE,
    diag_shift: float = DIAG_SHIFT,
) -> ConstrainedCholesky:
    """Build the constrained Cholesky factor from unconstrained parameters.

    Raises
    ------
    DimensionMismatch
        If the vector length differs from ``count_unconstrained(structure)``.
    """
    L = factor_matrix(unconstrained, structure, diag_scale, diag_shift)
    return ConstrainedCholesky(structure=structure, L=L)


def assemble(factor: ConstrainedCholesky) -> ScoreCovariance:
    """``Sigma = L L^T`` split into standard deviations and correlations."""
    return covariance_from_sigma(factor.L @ factor.L.T)


def covariance_from_sigma(sigma: np.ndarray) -> ScoreCovariance:
    sigma = 0.5 * (sigma + sigma.T)
    sd = np.sqrt(np.diag(sigma))
    R = sigma / np.outer(sd, sd)
    np.fill_diagonal(R, 1.0)
    return ScoreCovariance(sigma=sigma, S=np.diag(sd), R=R)


def unconstrained_from_sigma(
    sigma: np.ndarray,
    structure: BlockStructure,
    diag_scale: float = DIAG_SCALE,
    diag_shift: float = DIAG_SHIFT,
) -> np.ndarray:
    """Inverse map: unconstrained vector whose factor reproduces ``sigma``.

    ``sigma`` must be PD with diagonal within-block covariances.
    """
    L = np.linalg.cholesky(sigma)
    K = structure.total
    out = np.empty(count_unconstrained(structure))
    out[:K] = (np.log(np.diag(L)) - diag_shift) / diag_scale
    r, c = structure.cross_index
    out[K:] = L[r, c]
    return out

"""Gaussian mutual information between blocks of FPC scores.

All quantities depend on the score correlation matrix only.  With
``logdet(A)`` the log-determinant of the correlation sub-matrix over the
components of the block set ``A``:

    MI(p1, p2)       = -1/2 logdet({p1, p2})
    CMI(p1, p2 | r)  =  1/2 [logdet(all \\ p2) + logdet(all \\ p1)
                             - logdet(all \\ {p1, p2}) - logdet(all)]

and the normalized version ``sqrt(1 - exp(-2 MI))`` lies in [0, 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Literal

import numpy as np

from .covariance import BlockStructure
from .errors import NegativeMI, SingularSubmatrix

PIVOT_TOL = -1e-10

Kind = Literal["marginal", "conditional"]


def logdet_corr(R: np.ndarray, idx: np.ndarray) -> float:
    """Log-determinant of ``R[idx][:, idx]`` via Cholesky; 0 for an empty set."""
    if len(idx) == 0:
        return 0.0
    sub = R[np.ix_(idx, idx)]
    try:
        C = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(sub)
        raise SingularSubmatrix(f"correlation sub-matrix is not positive definite (min eigenvalue {w.min():.3g})") from None
    d = np.diag(C)
    if np.any(d <= 0) or np.min(d) ** 2 <= -PIVOT_TOL:
        raise SingularSubmatrix("correlation sub-matrix is singular")
    return 2.0 * float(np.sum(np.log(d)))


def marginal_mi(R: np.ndarray, structure: BlockStructure, p1: int, p2: int) -> float:
    """Mutual information (nats) between the scores of blocks ``p1`` and ``p2``."""
    if p1 == p2:
        raise ValueError("blocks must differ")
    return max(0.0, -0.5 * logdet_corr(R, structure.indices({p1, p2})))


def conditional_mi(R: np.ndarray, structure: BlockStructure, p1: int, p2: int) -> float:
    """Mutual information (nats) of blocks ``p1``, ``p2`` given all other blocks."""
    if p1 == p2:
        raise ValueError("blocks must differ")
    everything = set(range(structure.n_blocks))
    rest = everything - {p1, p2}
    val = 0.5 * (
        logdet_corr(R, structure.indices(everything - {p2}))
        + logdet_corr(R, structure.indices(everything - {p1}))
        - logdet_corr(R, structure.indices(rest))
        - logdet_corr(R, structure.indices(everything))
    )
    return max(0.0, val)


def normalize(mi: float | np.ndarray) -> float | np.ndarray:
    """Map MI in nats onto [0, 1): ``sqrt(1 - exp(-2 mi))``."""
    m = np.asarray(mi, dtype=float)
    if np.any(m < 0):
        raise NegativeMI(f"mutual information must be nonnegative, got {m.min()}")
    out = np.sqrt(-np.expm1(-2.0 * m))
    return float(out) if out.ndim == 0 else out


def association(R: np.ndarray, structure: BlockStructure, p1: int, p2: int, kind: Kind = "marginal") -> float:
    """Normalized marginal or conditional MI for one block pair."""
    fn = marginal_mi if kind == "marginal" else conditional_mi
    return normalize(fn(R, structure, p1, p2))


@dataclass
class AssociationEstimate:
    pair: tuple[int, int]
    kind: str
    values: np.ndarray
    median: float
    lo: float
    hi: float


def posterior_association(
    correlations: np.ndarray,
    structure: BlockStructure,
    pairs=None,
    kind: Kind = "marginal",
    level: float = 0.95,
) -> list[AssociationEstimate]:
    """Per-draw normalized (C)MI summarized by median and equal-tailed interval.

    Parameters
    ----------
    correlations : ndarray, shape (S, K, K)
        One score correlation matrix per posterior draw.
    pairs : iterable of (int, int), optional
        Block pairs; all unordered pairs by default.
    """
    correlations = np.asarray(correlations)
    if pairs is None:
        pairs = list(combinations(range(structure.n_blocks), 2))
    a = (1.0 - level) / 2.0
    out = []
    for p1, p2 in pairs:
        vals = np.array([association(R, structure, p1, p2, kind) for R in correlations])
        lo, med, hi = np.quantile(vals, [a, 0.5, 1.0 - a])
        out.append(AssociationEstimate((p1, p2), kind, vals, float(med), float(lo), float(hi)))
    return out


def write_association_csv(estimates, path: str | Path, block_names=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "kind", "median", "lo", "hi"])
        for e in estimates:
            a, b = e.pair
            if block_names is not None:
                a, b = block_names[a], block_names[b]
            w.writerow([f"{a}-{b}", e.kind, f"{e.median:.6f}", f"{e.lo:.6f}", f"{e.hi:.6f}"])

"""Post hoc identification of sampled loadings, and curve summaries.

Loadings are sampled without the orthonormality constraint, so each draw is
identified afterwards, block by block.  With ``D_p`` the (diagonal)
within-block score covariance, ``M_p = Theta_p D_p Theta_p^T`` is
eigendecomposed; its top ``K_p`` eigenvectors become the orthonormal
loadings ``Theta*_p`` and ``G_p = Theta*_p^T Theta_p`` maps the scores and
every covariance block:

    alpha*_p = G_p alpha_p,     Sigma*_pq = G_p Sigma_pq G_q^T.

Fitted curves ``B Theta* alpha*`` are unchanged.  Column signs are then
aligned across draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .basis import evaluate
from .covariance import BlockStructure, ScoreCovariance
from .errors import RankDeficientLoadings
from .model import ModelSpec, MsfpcaModel
from .sampler import Draws

RANK_TOL = 1e-10


@dataclass
class PosteriorSample:
    """Posterior draws in constrained coordinates, pooled over chains.

    Arrays carry a leading draw axis of length ``S = n_chains * n_iters``
    (chain-major).  ``loadings[p]`` has shape ``(S, Q_p, K_p)``.
    """

    spec: ModelSpec
    theta_mu: np.ndarray
    loadings: list[np.ndarray]
    sigma: np.ndarray
    scores: np.ndarray
    sigma_eps: np.ndarray
    n_chains: int = 1
    rotated: bool = False

    @property
    def structure(self) -> BlockStructure:
        return self.spec.structure

    @property
    def n_draws(self) -> int:
        return self.sigma.shape[0]

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(np.einsum("sii->si", self.sigma))
        return self.sigma / (sd[:, :, None] * sd[:, None, :])

    def eigenvalues(self, p: int) -> np.ndarray:
        """Within-block score variances of block ``p``, ``(S, K_p)``."""
        sl = self.structure.slice(p)
        return np.einsum("sii->si", self.sigma[:, sl, sl])

    def by_chain(self, values: np.ndarray) -> np.ndarray:
        """Reshape a ``(S, ...)`` array to ``(chains, iters, ...)``."""
        values = np.asarray(values)
        return values.reshape(self.n_chains, -1, *values.shape[1:])

    def select(self, idx) -> PosteriorSample:
        """Subset of draws (chain structure is dropped unless ``idx`` is a slice of whole chains)."""
        return replace(
            self,
            theta_mu=self.theta_mu[idx],
            loadings=[t[idx] for t in self.loadings],
            sigma=self.sigma[idx],
            scores=self.scores[idx],
            sigma_eps=self.sigma_eps[idx],
            n_chains=1,
        )

    def theta_matrix(self, s: int) -> np.ndarray:
        """Block-diagonal ``Q x K`` loading matrix of draw ``s``."""
        spec = self.spec
        T = np.zeros((int(spec.basis_offsets[-1]), self.structure.total))
        for p in range(spec.n_blocks):
            T[spec.basis_offsets[p] : spec.basis_offsets[p + 1], self.structure.slice(p)] = self.loadings[p][s]
        return T


def extract(draws: Draws, model: MsfpcaModel) -> PosteriorSample:
    """Map unconstrained draws to loadings, score covariance and scores."""
    X = draws.flat()
    layout, spec = model.layout, model.spec
    S, N, K = X.shape[0], model.design.n_subjects, spec.structure.total
    sec = layout.sections
    Ls = np.stack([model.cholesky(x) for x in X]) if S else np.zeros((0, K, K))
    Z = X[:, sec["z"]].reshape(S, N, K)
    scores = Z if spec.parameterization == "centered" else np.einsum("snk,sjk->snj", Z, Ls)
    loadings = [
        X[:, sec[f"theta_{p}"]].reshape(S, b.n_basis, b.n_components) for p, b in enumerate(spec.blocks)
    ]
    return PosteriorSample(
        spec=spec,
        theta_mu=X[:, sec["theta_mu"]].copy(),
        loadings=loadings,
        sigma=Ls @ np.transpose(Ls, (0, 2, 1)),
        scores=scores.copy(),
        sigma_eps=np.exp(X[:, sec["log_sigma"]]),
        n_chains=draws.n_chains,
    )


def _block_rotation(theta: np.ndarray, d: np.ndarray):
    """Batched rotation of one block: ``theta (S, Q, K)``, ``d (S, K)``.

    Returns ``(Theta*, G, eigenvalues)`` with eigenvalues descending.
    """
    K = theta.shape[2]
    sv = np.linalg.svd(theta, compute_uv=False)
    scale = np.maximum(sv[:, :1], 1.0)
    if np.any(sv[:, -1] <= RANK_TOL * scale[:, 0]):
        raise RankDeficientLoadings("loading matrix does not have full column rank")
    M = np.einsum("sqk,sk,srk->sqr", theta, d, theta)
    w, V = np.linalg.eigh(M)
    top = V[:, :, ::-1][:, :, :K]
    # deterministic column signs before any alignment: largest entry positive
    pivot = np.take_along_axis(top, np.abs(top).argmax(axis=1)[:, None, :], axis=1)
    top = top * np.where(pivot < 0, -1.0, 1.0)
    G = np.transpose(top, (0, 2, 1)) @ theta
    return top, G, w[:, ::-1][:, :K]


def rotate(sample: PosteriorSample) -> PosteriorSample:
    """Rotate every draw block-wise (see the module docstring)."""
    struct = sample.structure
    S, K = sample.n_draws, struct.total
    G = np.zeros((S, K, K))
    loadings = []
    for p in range(struct.n_blocks):
        sl = struct.slice(p)
        d = sample.eigenvalues(p)
        top, Gp, _ = _block_rotation(sample.loadings[p], d)
        G[:, sl, sl] = Gp
        loadings.append(top)
    sigma = G @ sample.sigma @ np.transpose(G, (0, 2, 1))
    scores = np.einsum("snk,sjk->snj", sample.scores, G)
    return replace(sample, loadings=loadings, sigma=sigma, scores=scores, rotated=True)


def rotate_draw(theta_raw, score_cov, scores: np.ndarray, structure: BlockStructure | None = None):
    """Rotate a single draw.

    Parameters
    ----------
    theta_raw : list of ndarray
        Per-block ``Q_p x K_p`` loadings.
    score_cov : ScoreCovariance or ndarray
        Score covariance ``Sigma`` (``K x K``).
    scores : ndarray, shape (N, K)

    Returns
    -------
    theta_star : list of ndarray
    sigma_star : ndarray
    alpha_star : ndarray
    """
    sigma = score_cov.sigma if isinstance(score_cov, ScoreCovariance) else np.asarray(score_cov, dtype=float)
    structure = structure or BlockStructure(tuple(t.shape[1] for t in theta_raw))
    K = structure.total
    G = np.zeros((K, K))
    theta_star = []
    for p, t in enumerate(theta_raw):
        sl = structure.slice(p)
        top, Gp, _ = _block_rotation(np.asarray(t, dtype=float)[None], np.diag(sigma[sl, sl])[None])
        G[sl, sl] = Gp[0]
        theta_star.append(top[0])
    scores = np.asarray(scores, dtype=float)
    return theta_star, G @ sigma @ G.T, scores @ G.T


def _flip(sample: PosteriorSample, signs: np.ndarray) -> PosteriorSample:
    """Apply per-draw, per-component signs ``(S, K)``."""
    struct = sample.structure
    loadings = [sample.loadings[p] * signs[:, None, struct.slice(p)] for p in range(struct.n_blocks)]
    return replace(
        sample,
        loadings=loadings,
        sigma=sample.sigma * signs[:, :, None] * signs[:, None, :],
        scores=sample.scores * signs[:, None, :],
    )


def _signs_against(sample: PosteriorSample, reference: list[np.ndarray]) -> np.ndarray:
    cols = []
    for p, ref in enumerate(reference):
        dots = np.einsum("sqk,qk->sk", sample.loadings[p], ref)
        cols.append(np.where(dots < 0, -1.0, 1.0))
    return np.concatenate(cols, axis=1)


def align_draws(sample: PosteriorSample, reference: list[np.ndarray] | None = None) -> PosteriorSample:
    """Flip FPC signs so that every loading column points along a reference.

    Without ``reference`` the first draw is used, then the aligned
    posterior mean once more.  A supplied reference (e.g. true loadings)
    is used directly.
    """
    if not sample.rotated:
        raise ValueError("align_draws expects rotated draws")
    if sample.n_draws == 0:
        return sample
    if reference is not None:
        return _flip(sample, _signs_against(sample, [np.asarray(r, dtype=float) for r in reference]))
    first = [t[0] for t in sample.loadings]
    out = _flip(sample, _signs_against(sample, first))
    mean = [t.mean(axis=0) for t in out.loadings]
    return _flip(out, _signs_against(out, mean))


def posterior_sample(draws: Draws, model: MsfpcaModel, reference=None) -> PosteriorSample:
    """Extract, rotate and align in one step."""
    return align_draws(rotate(extract(draws, model)), reference)


@dataclass
class CurveBand:
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class FittedModel:
    """Posterior summaries on a report grid.

    ``mean_curves[p]`` and ``fpc_curves[p][k]`` are pointwise median and
    95% bands; ``explained_variance[p]`` is the posterior median fraction
    of within-block score variance carried by each component.
    """

    sample: PosteriorSample
    grid: np.ndarray
    mean_curves: list[CurveBand]
    fpc_curves: list[list[CurveBand]]
    explained_variance: list[np.ndarray]

    @property
    def correlation(self) -> np.ndarray:
        return self.sample.correlation


def _band(values: np.ndarray, level: float) -> CurveBand:
    a = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(values, [a, 0.5, 1.0 - a], axis=0)
    return CurveBand(med, lo, hi)


def summarize_curves(sample: PosteriorSample, grid=None, level: float = 0.95) -> FittedModel:
    """Mean and FPC curve bands on ``grid`` (101 points on [0, 1] by default)."""
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    spec = sample.spec
    means, fpcs, explained = [], [], []
    for p, blk in enumerate(spec.blocks):
        phi = evaluate(blk.basis, grid)
        mu = sample.theta_mu[:, spec.basis_offsets[p] : spec.basis_offsets[p + 1]]
        means.append(_band(mu @ phi.T, level))
        curves = np.einsum("gq,sqk->skg", phi, sample.loadings[p])
        fpcs.append([_band(curves[:, k], level) for k in range(blk.n_components)])
        ev = sample.eigenvalues(p)
        explained.append(np.median(ev / ev.sum(axis=1, keepdims=True), axis=0))
    return FittedModel(sample, grid, means, fpcs, explained)


def write_curves_csv(fitted: FittedModel, path: str | Path, block_names=None) -> None:
    """Columns ``grid, block, component, median, lo, hi``; component is
    ``mean`` or the 1-based FPC index."""
    names = block_names or [str(p + 1) for p in range(len(fitted.mean_curves))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid", "block", "component", "median", "lo", "hi"])
        for p, name in enumerate(names):
            bands = [("mean", fitted.mean_curves[p])]
            bands += [(str(k + 1), b) for k, b in enumerate(fitted.fpc_curves[p])]
            for comp, b in bands:
                for g, t in enumerate(fitted.grid):
                    w.writerow([f"{t:.6g}", name, comp, f"{b.median[g]:.8g}", f"{b.lo[g]:.8g}", f"{b.hi[g]:.8g}"])


def write_covariance_csv(sample: PosteriorSample, path: str | Path, level: float = 0.95) -> None:
    """Posterior summary of every lower-triangular entry of Sigma* and R*."""
    a = (1.0 - level) / 2.0
    K = sample.structure.total
    R = sample.correlation
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "row", "col", "median", "lo", "hi"])
        for name, arr in (("sigma", sample.sigma), ("corr", R)):
            for i in range(K):
                for j in range(i + 1):
                    if name == "corr" and i == j:
                        continue
                    lo, med, hi = np.quantile(arr[:, i, j], [a, 0.5, 1.0 - a])
                    w.writerow([name, i + 1, j + 1, f"{med:.8g}", f"{lo:.8g}", f"{hi:.8g}"])

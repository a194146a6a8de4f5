"""Joint log posterior of the multivariate sparse FPCA model.

For subject ``i`` with stacked observations ``Y_i`` (all blocks),

    Y_i = B_i theta_mu + B_i Theta alpha_i + eps_i,  eps_i ~ N(0, sigma^2 I)
    alpha_i ~ N(0, L L^T)

with block-diagonal ``B_i`` and ``Theta`` and ``L`` the constrained
Cholesky factor of the score covariance.  Priors: ``theta_mu ~ N(0, I)``,
loading entries ``~ N(0, 1)``, ``sigma ~ Half-Cauchy(0, 1)`` sampled on
the log scale, flat prior on the covariance coordinates.

The scores are sampled either directly (``"centered"``, the default) or
through innovations ``z_i ~ N(0, I)`` with ``alpha_i = L z_i``
(``"noncentered"``).  Under the flat prior on the covariance coordinates
the non-centered form leaves the posterior improper: the likelihood stays
bounded as a diagonal entry of ``L`` goes to zero, so those coordinates
drift to minus infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .basis import OrthonormalBasis, evaluate, make_basis
from .covariance import (
    DIAG_SCALE,
    DIAG_SHIFT,
    BlockStructure,
    count_unconstrained,
    factor_matrix,
    factor_vjp,
)
from .dataset import MultiBlockDataset
from .errors import DimensionMismatch

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)


@dataclass(frozen=True)
class BlockSpec:
    n_components: int
    basis: OrthonormalBasis

    @property
    def n_basis(self) -> int:
        return self.basis.n_basis


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the model: ``K_p`` components and a basis per block.

    ``per_block_sigma`` switches from one residual scale shared by all
    blocks to one scale per block.
    """

    blocks: tuple[BlockSpec, ...]
    per_block_sigma: bool = False
    diag_scale: float = DIAG_SCALE
    diag_shift: float = DIAG_SHIFT
    parameterization: str = "centered"

    def __post_init__(self):
        if self.parameterization not in ("centered", "noncentered"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        for b in self.blocks:
            if not 1 <= b.n_components < b.n_basis:
                raise ValueError(f"need 1 <= K_p < Q_p, got K_p={b.n_components}, Q_p={b.n_basis}")

    @classmethod
    def build(cls, n_components, n_basis, grid_size: int = 1001, **kw) -> ModelSpec:
        """Spec with equally spaced knots, e.g. ``build((2, 2, 1), (6, 5, 5))``."""
        if len(n_components) != len(n_basis):
            raise DimensionMismatch("n_components and n_basis differ in length")
        bases = {}
        blocks = []
        for k, q in zip(n_components, n_basis):
            if q not in bases:
                bases[q] = make_basis(int(q), grid_size)
            blocks.append(BlockSpec(int(k), bases[q]))
        return cls(tuple(blocks), **kw)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @cached_property
    def structure(self) -> BlockStructure:
        return BlockStructure(tuple(b.n_components for b in self.blocks))

    @property
    def n_components(self) -> tuple[int, ...]:
        return tuple(b.n_components for b in self.blocks)

    @property
    def n_basis(self) -> tuple[int, ...]:
        return tuple(b.n_basis for b in self.blocks)

    @cached_property
    def basis_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_basis)]).astype(int)

    @property
    def n_sigma(self) -> int:
        return self.n_blocks if self.per_block_sigma else 1


@dataclass
class ParameterVector:
    """Model parameters in unconstrained coordinates.

    ``z_scores`` holds the scores ``alpha`` themselves under the centered
    parameterization and the innovations ``z`` under the non-centered one.
    """

    theta_mu: np.ndarray
    theta_raw: list[np.ndarray]
    cov_raw: np.ndarray
    z_scores: np.ndarray
    log_sigma_eps: np.ndarray


@dataclass
class LogDensityResult:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class ParameterLayout:
    """Flat-vector layout: theta_mu | loadings (row-major per block) |
    covariance coordinates | scores z (row-major N x K) | log sigma."""

    spec: ModelSpec
    n_subjects: int
    sections: dict = field(init=False, repr=False)

    def __post_init__(self):
        spec = self.spec
        sizes = [
            ("theta_mu", sum(spec.n_basis)),
            *[(f"theta_{p}", b.n_basis * b.n_components) for p, b in enumerate(spec.blocks)],
            ("cov_raw", count_unconstrained(spec.structure)),
            ("z", self.n_subjects * spec.structure.total),
            ("log_sigma", spec.n_sigma),
        ]
        sections, start = {}, 0
        for name, n in sizes:
            sections[name] = slice(start, start + n)
            start += n
        object.__setattr__(self, "sections", sections)

    @property
    def dim(self) -> int:
        return self.sections["log_sigma"].stop

    def names(self) -> list[str]:
        """Human-readable coordinate names, used in file headers."""
        out = [f"theta_mu[{j}]" for j in range(sum(self.spec.n_basis))]
        for p, b in enumerate(self.spec.blocks):
            out += [f"theta_raw[{p}][{q},{k}]" for q in range(b.n_basis) for k in range(b.n_components)]
        out += [f"cov_raw[{j}]" for j in range(count_unconstrained(self.spec.structure))]
        K = self.spec.structure.total
        tag = "alpha" if self.spec.parameterization == "centered" else "z"
        out += [f"{tag}[{i},{k}]" for i in range(self.n_subjects) for k in range(K)]
        out += [f"log_sigma_eps[{j}]" for j in range(self.spec.n_sigma)]
        return out

    def unpack(self, x: np.ndarray) -> ParameterVector:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected parameter vector of length {self.dim}, got {x.shape[-1]}")
        s = self.sections
        return ParameterVector(
            theta_mu=x[s["theta_mu"]],
            theta_raw=[
                x[s[f"theta_{p}"]].reshape(b.n_basis, b.n_components) for p, b in enumerate(self.spec.blocks)
            ],
            cov_raw=x[s["cov_raw"]],
            z_scores=x[s["z"]].reshape(self.n_subjects, self.spec.structure.total),
            log_sigma_eps=x[s["log_sigma"]],
        )

    def pack(self, params: ParameterVector) -> np.ndarray:
        parts = [np.ravel(params.theta_mu)]
        parts += [np.ravel(t) for t in params.theta_raw]
        parts += [np.ravel(params.cov_raw), np.ravel(params.z_scores), np.ravel(params.log_sigma_eps)]
        x = np.concatenate(parts).astype(float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"parameter vector has length {x.size}, layout needs {self.dim}")
        return x


class DesignCache:
    """Padded design arrays for vectorized likelihood evaluation.

    Slots of the observation axis are grouped by block: block ``p`` owns
    ``max_i V_ip`` consecutive slots.  ``B`` has shape ``(N, V, Q)`` with
    each row nonzero only in its block's basis columns.
    """

    def __init__(self, dataset: MultiBlockDataset, spec: ModelSpec):
        if dataset.n_blocks != spec.n_blocks:
            raise DimensionMismatch(f"dataset has {dataset.n_blocks} blocks, model spec has {spec.n_blocks}")
        N = dataset.n_subjects
        counts = dataset.counts() if N else np.zeros((0, spec.n_blocks), dtype=int)
        vmax = counts.max(axis=0) if N else np.zeros(spec.n_blocks, dtype=int)
        voff = np.concatenate([[0], np.cumsum(vmax)]).astype(int)
        V, Q = int(voff[-1]), int(spec.basis_offsets[-1])
        B = np.zeros((N, V, Q))
        y = np.zeros((N, V))
        mask = np.zeros((N, V))
        slot_block = np.repeat(np.arange(spec.n_blocks), vmax)
        for i in range(N):
            for p, blk in enumerate(spec.blocks):
                n = counts[i, p]
                if n == 0:
                    continue
                rows = slice(voff[p], voff[p] + n)
                cols = slice(spec.basis_offsets[p], spec.basis_offsets[p + 1])
                B[i, rows, cols] = evaluate(blk.basis, dataset.times[i][p])
                y[i, rows] = dataset.values[i][p]
                mask[i, rows] = 1.0
        self.B, self.y, self.mask = B, y, mask
        # flat observation list for the compiled kernel
        qmax = max(spec.n_basis)
        subj, blk, col, bv, yy = [], [], [], [], []
        for i in range(N):
            for p, b in enumerate(spec.blocks):
                n = counts[i, p]
                if n == 0:
                    continue
                rows = np.zeros((n, qmax))
                rows[:, : b.n_basis] = evaluate(b.basis, dataset.times[i][p])
                bv.append(rows)
                yy.append(np.asarray(dataset.values[i][p], dtype=float))
                subj += [i] * n
                blk += [p] * n
                col += [int(spec.basis_offsets[p])] * n
        self.obs_subj = np.array(subj, dtype=np.int64)
        self.obs_block = np.array(blk, dtype=np.int64)
        self.obs_col = np.array(col, dtype=np.int64)
        self.obs_b = np.concatenate(bv) if bv else np.zeros((0, qmax))
        self.obs_y = np.concatenate(yy) if yy else np.zeros(0)
        self.counts = counts
        self.slot_block = slot_block
        self.n_obs = counts.sum(axis=0).astype(float)
        self.n_subjects = N


class MsfpcaModel:
    """Log posterior and gradient over the flat unconstrained vector."""

    def __init__(self, dataset: MultiBlockDataset, spec: ModelSpec):
        self.dataset = dataset
        self.spec = spec
        self.layout = ParameterLayout(spec, dataset.n_subjects)
        self.design = DesignCache(dataset, spec)
        struct = spec.structure
        # positions of the loading blocks inside the block-diagonal Q x K matrix
        rows, cols = [], []
        for p, b in enumerate(spec.blocks):
            q0, k0 = spec.basis_offsets[p], struct.offsets[p]
            for q in range(b.n_basis):
                for k in range(b.n_components):
                    rows.append(q0 + q)
                    cols.append(k0 + k)
        self._theta_idx = (np.array(rows), np.array(cols))
        self._theta_sl = slice(self.layout.sections["theta_0"].start, self.layout.sections["cov_raw"].start)
        sec = self.layout.sections
        d = self.design
        cr, cc = struct.cross_index
        wr, wc = struct.within_index
        self._kernel_args = (
            d.obs_subj, d.obs_block, d.obs_col, d.obs_b, d.obs_y, d.n_obs.astype(float),
            np.array(spec.n_basis, dtype=np.int64),
            dataset.n_subjects, int(spec.basis_offsets[-1]), struct.total,
            sec["theta_mu"].start, sec["theta_0"].start,
            self._theta_idx[0].astype(np.int64), self._theta_idx[1].astype(np.int64),
            sec["cov_raw"].start, sec["z"].start, sec["log_sigma"].start, spec.n_sigma,
            cr.astype(np.int64), cc.astype(np.int64), wr.astype(np.int64), wc.astype(np.int64),
            float(spec.diag_scale), float(spec.diag_shift),
            spec.parameterization == "centered",
        )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def __getstate__(self):
        return {"dataset": self.dataset, "spec": self.spec}

    def __setstate__(self, state):
        self.__init__(state["dataset"], state["spec"])

    def theta_matrix(self, x: np.ndarray) -> np.ndarray:
        """Block-diagonal ``Q x K`` loading matrix from the flat vector."""
        Q, K = int(self.spec.basis_offsets[-1]), self.spec.structure.total
        T = np.zeros((Q, K))
        T[self._theta_idx] = x[self._theta_sl]
        return T

    def _sigma_per_slot(self, log_sigma: np.ndarray) -> np.ndarray:
        if self.spec.per_block_sigma:
            return np.exp(log_sigma)[self.design.slot_block]
        return np.full(self.design.slot_block.shape, math.exp(log_sigma[0]))

    def fitted_coefficients(self, x: np.ndarray) -> np.ndarray:
        """Per-subject basis coefficients ``theta_mu + Theta alpha_i``, ``(N, Q)``."""
        s = self.layout.sections
        return x[s["theta_mu"]] + self.scores(x) @ self.theta_matrix(x).T

    def cholesky(self, x: np.ndarray) -> np.ndarray:
        spec = self.spec
        return factor_matrix(x[self.layout.sections["cov_raw"]], spec.structure, spec.diag_scale, spec.diag_shift)

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Scores ``alpha``, ``(N, K)``, whatever the parameterization."""
        Z = x[self.layout.sections["z"]].reshape(self.design.n_subjects, -1)
        if self.spec.parameterization == "centered":
            return Z
        return Z @ self.cholesky(x).T

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Masked residuals ``(N, V)``."""
        d = self.design
        coef = self.fitted_coefficients(x)
        pred = np.matmul(d.B, coef[:, :, None])[:, :, 0]
        return (d.y - pred) * d.mask

    def loglik_pointwise(self, x: np.ndarray) -> np.ndarray:
        """Per-subject log-likelihood conditional on the sampled scores."""
        d = self.design
        log_sigma = x[self.layout.sections["log_sigma"]]
        sig = self._sigma_per_slot(log_sigma)
        r = self.residuals(x)
        per_slot = -0.5 * LOG_2PI - np.log(sig) - 0.5 * (r / sig) ** 2
        return (per_slot * d.mask).sum(axis=1)

    def log_likelihood(self, x: np.ndarray) -> float:
        return float(self.loglik_pointwise(x).sum())

    def log_prior(self, x: np.ndarray) -> float:
        out = self._base_prior(x)
        if self.spec.parameterization == "centered":
            out += self._score_prior(x[self.layout.sections["z"]].reshape(self.design.n_subjects, -1), self.cholesky(x))[0]
        return out

    def _base_prior(self, x: np.ndarray) -> float:
        """Log prior of everything except centered scores."""
        s = self.layout.sections
        out = 0.0
        names = ("theta_mu", "z") if self.spec.parameterization == "noncentered" else ("theta_mu",)
        for name in names:
            v = x[s[name]]
            out += -0.5 * v.size * LOG_2PI - 0.5 * float(v @ v)
        v = x[self._theta_sl]
        out += -0.5 * v.size * LOG_2PI - 0.5 * float(v @ v)
        u = x[s["log_sigma"]]
        out += float(np.sum(LOG_2_OVER_PI - np.log1p(np.exp(2 * u)) + u))
        return out

    def _score_prior(self, alpha: np.ndarray, L: np.ndarray):
        """``sum_i log N(alpha_i | 0, L L^T)`` with gradients wrt alpha and L."""
        N, K = alpha.shape
        U = solve_triangular(L, alpha.T, lower=True).T
        V = solve_triangular(L.T, U.T, lower=False).T  # rows (L L^T)^-1 alpha_i
        d = np.diag(L)
        value = -0.5 * N * K * LOG_2PI - N * float(np.sum(np.log(d))) - 0.5 * float(np.sum(U * U))
        g_L = V.T @ U - N * np.diag(1.0 / d)
        return value, -V, g_L

    def log_density(self, x: np.ndarray) -> float:
        return self.log_likelihood(x) + self.log_prior(x)

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        # overflow far out in the tails yields a non-finite density, which the
        # sampler treats as a divergence
        with np.errstate(all="ignore"):
            lp, g = self.log_density_and_gradient(x)
        return (lp, g) if np.isfinite(lp) else (-np.inf, g)

    def log_density_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"expected parameter vector of length {self.dim}, got shape {x.shape}")
        lp, grad = _kernels.logp_grad(x, *self._kernel_args)
        return float(lp), grad

    def log_density_and_gradient_numpy(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Vectorized reference implementation of the same quantity."""
        spec, d, s = self.spec, self.design, self.layout.sections
        struct = spec.structure
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"expected parameter vector of length {self.dim}, got shape {x.shape}")
        N, K = d.n_subjects, struct.total

        theta_mu = x[s["theta_mu"]]
        T = self.theta_matrix(x)
        L = factor_matrix(x[s["cov_raw"]], struct, spec.diag_scale, spec.diag_shift)
        Z = x[s["z"]].reshape(N, K)
        log_sigma = x[s["log_sigma"]]

        centered = spec.parameterization == "centered"
        alpha = Z if centered else Z @ L.T
        coef = theta_mu + alpha @ T.T
        pred = np.matmul(d.B, coef[:, :, None])[:, :, 0]
        r = (d.y - pred) * d.mask

        grad = np.empty(self.dim)
        if spec.per_block_sigma:
            sig2 = np.exp(2 * log_sigma)
            ss = np.array([np.sum(r[:, d.slot_block == p] ** 2) for p in range(spec.n_blocks)])
            ll = float(np.sum(-0.5 * d.n_obs * LOG_2PI - d.n_obs * log_sigma - 0.5 * ss / sig2))
            w = r / sig2[d.slot_block]
            g_ls = -d.n_obs + ss / sig2
        else:
            sig2 = float(np.exp(2 * log_sigma[0]))
            n = d.n_obs.sum()
            ss = float(np.sum(r * r))
            ll = -0.5 * n * LOG_2PI - n * log_sigma[0] - 0.5 * ss / sig2
            w = r / sig2
            g_ls = np.array([-n + ss / sig2])

        H = np.matmul(w[:, None, :], d.B)[:, 0, :]  # d loglik / d coef, (N, Q)
        g_alpha = H @ T
        g_T = H.T @ alpha

        grad[s["theta_mu"]] = H.sum(axis=0) - theta_mu
        grad[self._theta_sl] = g_T[self._theta_idx] - x[self._theta_sl]
        lp = self._base_prior(x)
        if centered:
            lp_alpha, g_alpha_prior, g_L = self._score_prior(Z, L)
            grad[s["z"]] = (g_alpha + g_alpha_prior).ravel()
            lp += lp_alpha
        else:
            g_L = g_alpha.T @ Z
            grad[s["z"]] = (g_alpha @ L - Z).ravel()
        grad[s["cov_raw"]] = factor_vjp(L, g_L, struct, spec.diag_scale)
        e2u = np.exp(2 * log_sigma)
        grad[s["log_sigma"]] = g_ls - 2 * e2u / (1 + e2u) + 1
        return ll + lp, grad

    def initial_point(self, rng: np.random.Generator, radius: float = 2.0) -> np.ndarray:
        return rng.uniform(-radius, radius, size=self.dim)


def log_posterior(params: ParameterVector, data: MultiBlockDataset, spec: ModelSpec) -> float:
    model = MsfpcaModel(data, spec)
    return model.log_density(model.layout.pack(params))


def gradient(params: ParameterVector, data: MultiBlockDataset, spec: ModelSpec) -> LogDensityResult:
    model = MsfpcaModel(data, spec)
    value, grad = model.log_density_and_gradient(model.layout.pack(params))
    return LogDensityResult(value=value, gradient=grad)

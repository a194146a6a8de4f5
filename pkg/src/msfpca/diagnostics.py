"""PSIS-LOO over subjects and posterior predictive replication.

The leave-one-out unit is a subject's whole multivariate trajectory.  The
default pointwise likelihood conditions on the sampled scores; the
``"marginal"`` variant integrates the scores out analytically,

    Y_i ~ N(B_i theta_mu, B_i Theta Sigma Theta^T B_i^T + sigma^2 I).

Both target the same leave-one-out predictive density, but the conditional
importance ratios are far heavier tailed because each subject's scores are
informed mostly by that subject's own data.  Use the marginal form for
PSIS-LOO; the conditional form is kept for its tie to the sampled joint
density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .dataset import MultiBlockDataset
from .errors import DimensionMismatch, InsufficientTail, TooFewDraws
from .model import MsfpcaModel
from .posterior import PosteriorSample

LOG_2PI = math.log(2.0 * math.pi)
MIN_DRAWS = 100
MIN_TAIL = 5
K_GOOD = 0.5
K_BAD = 0.7
DEGENERATE_K = -math.inf


def _slot_sigma(sample: PosteriorSample, model: MsfpcaModel) -> np.ndarray:
    """Residual sd per draw and observation slot, ``(S, V)``."""
    sig = sample.sigma_eps
    if sig.shape[1] == 1:
        return np.repeat(sig, model.design.slot_block.size, axis=1)
    return sig[:, model.design.slot_block]


def _mean_and_loading_rows(sample: PosteriorSample, model: MsfpcaModel, s: int):
    d = model.design
    T = sample.theta_matrix(s)
    return d.B @ sample.theta_mu[s], d.B @ T  # (N, V), (N, V, K)


def pointwise_loglik(sample: PosteriorSample, model: MsfpcaModel, kind: str = "conditional") -> np.ndarray:
    """``log p(Y_i | draw s)`` as an ``(S, N)`` matrix.

    Subjects without observations contribute 0.
    """
    d = model.design
    if sample.scores.shape[1] != d.n_subjects or sample.spec != model.spec:
        raise DimensionMismatch("posterior sample does not match the model's data and spec")
    if kind not in ("conditional", "marginal"):
        raise ValueError(f"unknown likelihood kind {kind!r}")
    S, N = sample.n_draws, d.n_subjects
    sig = _slot_sigma(sample, model)
    out = np.empty((S, N))
    if kind == "conditional":
        for s in range(S):
            mean, rows = _mean_and_loading_rows(sample, model, s)
            pred = mean + np.einsum("nvk,nk->nv", rows, sample.scores[s])
            r = (d.y - pred) * d.mask
            per_slot = -0.5 * LOG_2PI - np.log(sig[s]) - 0.5 * (r / sig[s]) ** 2
            out[s] = (per_slot * d.mask).sum(axis=1)
        return out
    V = d.mask.shape[1]
    eye = np.eye(V)
    for s in range(S):
        mean, rows = _mean_and_loading_rows(sample, model, s)
        C = rows @ sample.sigma[s] @ np.transpose(rows, (0, 2, 1))
        C = C * d.mask[:, :, None] * d.mask[:, None, :] + eye * (d.mask * sig[s] ** 2 + (1.0 - d.mask))[:, None, :]
        chol = np.linalg.cholesky(C)
        r = (d.y - mean) * d.mask
        u = np.linalg.solve(chol, r[:, :, None])[:, :, 0]
        logdet = np.log(np.einsum("nvv->nv", chol)).sum(axis=1)
        n_i = d.mask.sum(axis=1)
        out[s] = -0.5 * n_i * LOG_2PI - logdet - 0.5 * (u * u).sum(axis=1)
    return out


def fit_generalized_pareto(tail) -> tuple[float, float]:
    """Shape and scale of a generalized Pareto fit to exceedances.

    Zhang and Stephens' profile-posterior estimate, with the shape shrunk
    towards 0.5 by a weak prior worth 10 observations.  A constant tail
    returns ``(-inf, 0)``.
    """
    x = np.sort(np.asarray(tail, dtype=float))
    n = x.size
    if n < MIN_TAIL:
        raise InsufficientTail(f"need at least {MIN_TAIL} exceedances, got {n}")
    if x[-1] <= 0 or x[0] == x[-1]:
        return DEGENERATE_K, 0.0
    prior_bs, prior_k = 3.0, 10.0
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (prior_bs * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k = np.mean(np.log1p(-b[:, None] * x), axis=1)
    prof = n * (np.log(-b / k) - k - 1.0)
    w = 1.0 / np.exp(prof - prof[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    b, w = b[keep], w[keep] / w[keep].sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.mean(np.log1p(-b_post * x)))
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def _gpd_quantile(probs: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-probs)
    return sigma * np.expm1(-k * np.log1p(-probs)) / k


def tail_length(n_draws: int) -> int:
    return max(MIN_TAIL, int(math.ceil(min(0.2 * n_draws, 3.0 * math.sqrt(n_draws)))))


def psis_smooth(log_ratios: np.ndarray) -> tuple[np.ndarray, float]:
    """Pareto-smoothed, truncated and self-normalized log weights of one
    unit, with its shape diagnostic."""
    x = np.asarray(log_ratios, dtype=float)
    x = x - x.max()
    S = x.size
    M = tail_length(S)
    order = np.argsort(x, kind="stable")
    cutoff = max(x[order[-M - 1]], math.log(np.finfo(float).tiny))
    in_tail = x > cutoff
    k = DEGENERATE_K
    lw = x.copy()
    if in_tail.sum() >= MIN_TAIL:
        tail_idx = np.flatnonzero(in_tail)
        tail_idx = tail_idx[np.argsort(x[tail_idx], kind="stable")]
        exc = np.exp(x[tail_idx]) - math.exp(cutoff)
        k, sigma = fit_generalized_pareto(exc)
        if math.isfinite(k) and sigma > 0:
            n = tail_idx.size
            smoothed = _gpd_quantile((np.arange(n) + 0.5) / n, k, sigma)
            lw[tail_idx] = np.log(smoothed + math.exp(cutoff))
            lw = np.minimum(lw, 0.0)  # truncate at the largest raw weight
    return lw - logsumexp(lw), k


@dataclass
class LooReport:
    elpd_loo: float
    se_elpd: float
    pointwise: np.ndarray
    pareto_k: np.ndarray
    lppd: float

    @property
    def p_loo(self) -> float:
        return self.lppd - self.elpd_loo

    def k_counts(self) -> dict:
        k = self.pareto_k
        return {
            "good": int(np.sum(k < K_GOOD)),
            "ok": int(np.sum((k >= K_GOOD) & (k <= K_BAD))),
            "bad": int(np.sum(k > K_BAD)),
        }

    def flagged(self, threshold: float = K_BAD) -> np.ndarray:
        return np.flatnonzero(self.pareto_k > threshold)


def psis_loo(loglik: np.ndarray) -> LooReport:
    """PSIS-LOO from an ``(S, N)`` pointwise log-likelihood matrix."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2:
        raise DimensionMismatch("loglik must be a draws x units matrix")
    S, N = loglik.shape
    if S < MIN_DRAWS:
        raise TooFewDraws(f"PSIS-LOO needs at least {MIN_DRAWS} draws, got {S}")
    pointwise = np.empty(N)
    khat = np.empty(N)
    for i in range(N):
        lw, khat[i] = psis_smooth(-loglik[:, i])
        pointwise[i] = logsumexp(lw + loglik[:, i])
    lppd = float(np.sum(logsumexp(loglik, axis=0) - math.log(S)))
    se = float(math.sqrt(N * pointwise.var())) if N > 1 else 0.0
    return LooReport(float(pointwise.sum()), se, pointwise, khat, lppd)


def write_loo_csv(report: LooReport, path: str | Path, subjects=None) -> None:
    subjects = subjects if subjects is not None else [str(i + 1) for i in range(report.pointwise.size)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "elpd_i", "pareto_k"])
        for sid, e, k in zip(subjects, report.pointwise, report.pareto_k):
            w.writerow([sid, f"{e:.8g}", f"{k:.6g}"])


@dataclass
class PpcExport:
    """Observed values and replicated datasets at the observed design.

    ``observed[p]`` pools block ``p``'s values over subjects in dataset
    order; ``replicates[p]`` has shape ``(n_rep, len(observed[p]))``.
    """

    dataset: MultiBlockDataset
    draw_index: np.ndarray
    observed: list[np.ndarray]
    replicates: list[np.ndarray]


def posterior_predictive(
    sample: PosteriorSample, model: MsfpcaModel, n_rep: int, seed: int = 0
) -> PpcExport:
    """Replicate the data from ``n_rep`` evenly spaced draws with fresh
    scores and residuals."""
    S = sample.n_draws
    if not 1 <= n_rep <= S:
        raise ValueError(f"n_rep must lie in [1, {S}]")
    rng = np.random.default_rng(seed)
    d, spec = model.design, model.spec
    idx = np.linspace(0, S - 1, n_rep).round().astype(int)
    N, P = d.n_subjects, spec.n_blocks
    voff = np.concatenate([[0], np.cumsum([np.sum(d.slot_block == p) for p in range(P)])]).astype(int)
    sig = _slot_sigma(sample, model)
    reps = [[] for _ in range(P)]
    for s in idx:
        alpha = rng.multivariate_normal(np.zeros(spec.structure.total), sample.sigma[s], size=N, method="cholesky")
        mean, rows = _mean_and_loading_rows(sample, model, s)
        y = mean + np.einsum("nvk,nk->nv", rows, alpha) + sig[s] * rng.standard_normal(d.mask.shape)
        for p in range(P):
            reps[p].append(np.concatenate([y[i, voff[p] : voff[p] + d.counts[i, p]] for i in range(N)]))
    observed = [model.dataset.block_values(p) for p in range(P)]
    return PpcExport(model.dataset, idx, observed, [np.array(r) for r in reps])


def write_ppc_csv(ppc: PpcExport, path: str | Path) -> None:
    """Long format: ``replicate, subject_id, block_id, time, value`` with
    ``replicate = observed`` for the data rows."""
    ds = ppc.dataset
    keys = []
    for p, _ in enumerate(ds.blocks):
        keys.append([(ds.subjects[i], t) for i in range(ds.n_subjects) for t in ds.times[i][p]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "subject_id", "block_id", "time", "value"])
        for p, block in enumerate(ds.blocks):
            for (sid, t), v in zip(keys[p], ppc.observed[p]):
                w.writerow(["observed", sid, block, f"{t:.8g}", f"{v:.8g}"])
        for r in range(len(ppc.draw_index)):
            for p, block in enumerate(ds.blocks):
                for (sid, t), v in zip(keys[p], ppc.replicates[p][r]):
                    w.writerow([r + 1, sid, block, f"{t:.8g}", f"{v:.8g}"])

"""Rank-normalized split-R-hat and effective sample size."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from ..errors import InsufficientChains


def _as_chains(draws, coordinate=None) -> np.ndarray:
    """``(chains, iters)`` array for one scalar quantity."""
    arr = getattr(draws, "samples", draws)
    arr = np.asarray(arr, dtype=float)
    if coordinate is not None:
        arr = arr[..., coordinate]
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected draws of shape (chains, iters) for a single coordinate")
    return arr


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, -n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    if np.all(x == x.flat[0]):
        return np.nan
    chain_var = x.var(axis=1, ddof=1)
    W = chain_var.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def rhat(draws, coordinate=None) -> float:
    """Rank-normalized split R-hat (maximum of bulk and folded versions).

    ``draws`` is a :class:`Draws` (with ``coordinate``) or a
    ``(chains, iters)`` array.
    """
    x = _as_chains(draws, coordinate)
    if x.shape[0] < 2:
        raise InsufficientChains("R-hat needs at least two chains")
    xs = _split(x)
    bulk = _rhat_basic(_rank_normalize(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _rhat_basic(_rank_normalize(folded))
    return float(np.nanmax([bulk, tail])) if not (np.isnan(bulk) and np.isnan(tail)) else np.nan


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    c = x - x.mean(axis=-1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(c, n=nfft, axis=-1)
    return np.fft.irfft(f * np.conj(f), n=nfft, axis=-1)[..., :n] / n


def _ess_raw(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 4 or np.all(x == x.flat[0]):
        return np.nan
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0 and max_t + 1 < n:
        rho[max_t + 1] = rho_even
    # Geyer's initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + (rho[max_t + 1] if max_t + 1 < n else 0.0)
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess(draws, coordinate=None) -> float:
    """Bulk effective sample size on rank-normalized split chains."""
    x = _as_chains(draws, coordinate)
    return _ess_raw(_rank_normalize(_split(x)))


def summary_rhat(values: np.ndarray) -> np.ndarray:
    """R-hat for every trailing coordinate of a ``(chains, iters, ...)`` array."""
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], values.shape[1], -1)
    return np.array([rhat(flat[:, :, j]) for j in range(flat.shape[2])]).reshape(values.shape[2:])

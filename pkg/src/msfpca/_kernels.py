"""Compiled log posterior and gradient.

Mirrors :meth:`msfpca.model.MsfpcaModel.log_density_and_gradient_numpy`
but works on a flat list of observations and explicit loops, which avoids
the per-call overhead of many small array operations.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)
# reassociation only: vectorized reductions, but inf/nan keep their meaning
FAST = {"reassoc", "contract"}


@njit(cache=True, error_model="numpy", fastmath=FAST)
def factor(v, K, cross_r, cross_c, within_r, within_c, diag_scale, diag_shift):
    L = np.zeros((K, K))
    for j in range(K):
        L[j, j] = math.exp(diag_scale * v[j] + diag_shift)
    for m in range(cross_r.size):
        L[cross_r[m], cross_c[m]] = v[K + m]
    for m in range(within_r.size):
        i, j = within_r[m], within_c[m]
        s = 0.0
        for k in range(j):
            s += L[i, k] * L[j, k]
        L[i, j] = -s / L[j, j]
    return L


@njit(cache=True, error_model="numpy", fastmath=FAST)
def factor_adjoint(L, Lb, cross_r, cross_c, within_r, within_c, diag_scale, out):
    """Writes the gradient wrt the unconstrained coordinates into ``out``;
    ``Lb`` (lower triangle) is overwritten."""
    K = L.shape[0]
    for m in range(within_r.size - 1, -1, -1):
        i, j = within_r[m], within_c[m]
        g = Lb[i, j]
        if g == 0.0:
            continue
        Lb[j, j] -= g * L[i, j] / L[j, j]
        s_bar = -g / L[j, j]
        for k in range(j):
            Lb[i, k] += s_bar * L[j, k]
            Lb[j, k] += s_bar * L[i, k]
    for j in range(K):
        out[j] = Lb[j, j] * L[j, j] * diag_scale
    for m in range(cross_r.size):
        out[K + m] = Lb[cross_r[m], cross_c[m]]


@njit(cache=True, error_model="numpy", fastmath=FAST)
def logp_grad(
    x,
    # observations
    obs_subj, obs_block, obs_col, obs_b, obs_y, n_obs_block, block_nb,
    # layout
    N, Q, K, mu_start, theta_start, theta_rows, theta_cols, cov_start, z_start, sig_start, n_sigma,
    cross_r, cross_c, within_r, within_c, diag_scale, diag_shift,
    centered,
):
    P = n_obs_block.size
    grad = np.zeros(x.size)
    lp = 0.0

    T = np.zeros((Q, K))
    for m in range(theta_rows.size):
        T[theta_rows[m], theta_cols[m]] = x[theta_start + m]
    n_cov = K + cross_r.size
    L = factor(x[cov_start:cov_start + n_cov], K, cross_r, cross_c, within_r, within_c, diag_scale, diag_shift)
    Z = x[z_start:z_start + N * K].reshape((N, K))
    if centered:
        alpha = Z
    else:
        alpha = Z @ L.T

    # per-subject basis coefficients theta_mu + Theta alpha_i
    coef = np.empty((N, Q))
    for i in range(N):
        for q in range(Q):
            coef[i, q] = x[mu_start + q]
        for m in range(theta_rows.size):
            coef[i, theta_rows[m]] += x[theta_start + m] * alpha[i, theta_cols[m]]

    sig2 = np.empty(P)
    log_sig = np.empty(P)
    for p in range(P):
        u = x[sig_start + (p if n_sigma > 1 else 0)]
        log_sig[p] = u
        sig2[p] = math.exp(2.0 * u)

    ss = np.zeros(P)
    H = np.zeros((N, Q))
    for o in range(obs_y.size):
        i, p, c0 = obs_subj[o], obs_block[o], obs_col[o]
        nb = block_nb[p]
        pred = 0.0
        for q in range(nb):
            pred += obs_b[o, q] * coef[i, c0 + q]
        r = obs_y[o] - pred
        ss[p] += r * r
        w = r / sig2[p]
        for q in range(nb):
            H[i, c0 + q] += w * obs_b[o, q]

    ll = 0.0
    for p in range(P):
        ll += -0.5 * n_obs_block[p] * LOG_2PI - n_obs_block[p] * log_sig[p] - 0.5 * ss[p] / sig2[p]
    if n_sigma > 1:
        for p in range(P):
            grad[sig_start + p] = -n_obs_block[p] + ss[p] / sig2[p]
    else:
        g = 0.0
        for p in range(P):
            g += -n_obs_block[p] + ss[p] / sig2[p]
        grad[sig_start] = g

    # theta_mu
    for q in range(Q):
        s = 0.0
        for i in range(N):
            s += H[i, q]
        v = x[mu_start + q]
        grad[mu_start + q] = s - v
        lp += -0.5 * LOG_2PI - 0.5 * v * v
    # loadings
    for m in range(theta_rows.size):
        q, k = theta_rows[m], theta_cols[m]
        s = 0.0
        for i in range(N):
            s += H[i, q] * alpha[i, k]
        v = x[theta_start + m]
        grad[theta_start + m] = s - v
        lp += -0.5 * LOG_2PI - 0.5 * v * v

    g_alpha = np.zeros((N, K))
    for i in range(N):
        for m in range(theta_rows.size):
            q, k = theta_rows[m], theta_cols[m]
            g_alpha[i, k] += H[i, q] * T[q, k]

    Lb = np.zeros((K, K))
    if centered:
        # U = L^-1 alpha_i (forward), V = L^-T U (backward)
        U = np.empty(K)
        V = np.empty(K)
        quad = 0.0
        for i in range(N):
            for a in range(K):
                s = alpha[i, a]
                for b in range(a):
                    s -= L[a, b] * U[b]
                U[a] = s / L[a, a]
                quad += U[a] * U[a]
            for a in range(K - 1, -1, -1):
                s = U[a]
                for b in range(a + 1, K):
                    s -= L[b, a] * V[b]
                V[a] = s / L[a, a]
            for a in range(K):
                grad[z_start + i * K + a] = g_alpha[i, a] - V[a]
                for b in range(a + 1):
                    Lb[a, b] += V[a] * U[b]
        logdet = 0.0
        for a in range(K):
            logdet += math.log(L[a, a])
            Lb[a, a] -= N / L[a, a]
        lp += -0.5 * N * K * LOG_2PI - N * logdet - 0.5 * quad
    else:
        for i in range(N):
            for a in range(K):
                s = 0.0
                for b in range(a, K):
                    s += g_alpha[i, b] * L[b, a]
                v = Z[i, a]
                grad[z_start + i * K + a] = s - v
                lp += -0.5 * LOG_2PI - 0.5 * v * v
                for b in range(a + 1):
                    Lb[a, b] += g_alpha[i, a] * Z[i, b]

    gcov = np.empty(n_cov)
    factor_adjoint(L, Lb, cross_r, cross_c, within_r, within_c, diag_scale, gcov)
    grad[cov_start:cov_start + n_cov] = gcov

    for j in range(n_sigma):
        u = x[sig_start + j]
        e2u = math.exp(2.0 * u)
        lp += LOG_2_OVER_PI - math.log1p(e2u) + u
        grad[sig_start + j] += -2.0 * e2u / (1.0 + e2u) + 1.0
    return ll + lp, grad

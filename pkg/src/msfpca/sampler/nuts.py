"""Hamiltonian transitions with a diagonal metric.

``nuts_transition`` is the dynamic-trajectory sampler: the trajectory is
doubled in a random direction until the generalized no-U-turn criterion
fails (checked across and between merged subtrees) or ``max_depth`` is
reached, and the returned state is drawn multinomially, biased towards the
newest subtree at the top level.  ``hmc_transition`` is the fixed-length
fallback with a Metropolis correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class TransitionInfo:
    accept_stat: float
    n_leapfrog: int
    depth: int
    divergent: bool
    energy: float


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


def _criterion(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(p_sharp_plus @ rho) > 0.0 and float(p_sharp_minus @ rho) > 0.0


def leapfrog(log_density, z: Point, eps: float, inv_mass: np.ndarray) -> Point:
    p = z.p + 0.5 * eps * z.grad
    q = z.q + eps * inv_mass * p
    logp, grad = log_density(q)
    p = p + 0.5 * eps * grad
    return Point(q, p, logp, grad)


def _hamiltonian(z: Point, inv_mass: np.ndarray) -> float:
    h = -z.logp + 0.5 * float(z.p @ (inv_mass * z.p))
    return h if math.isfinite(h) else math.inf


class _Trajectory:
    """Mutable accumulators shared by one transition's recursion."""

    __slots__ = ("log_density", "eps", "inv_mass", "H0", "rng", "n_leapfrog", "sum_metro", "divergent")

    def __init__(self, log_density, eps, inv_mass, H0, rng):
        self.log_density = log_density
        self.eps = eps
        self.inv_mass = inv_mass
        self.H0 = H0
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False


def _build_tree(tr: _Trajectory, depth: int, z: Point, direction: int):
    """Extend from ``z`` by ``2**depth`` leapfrog steps.

    Returns ``(valid, z_end, proposal, log_sum_weight, rho, p_beg, p_end,
    p_sharp_beg, p_sharp_end)`` where ``z_end`` is the outermost state.
    """
    if depth == 0:
        z_new = leapfrog(tr.log_density, z, direction * tr.eps, tr.inv_mass)
        tr.n_leapfrog += 1
        H = _hamiltonian(z_new, tr.inv_mass)
        if H - tr.H0 > DIVERGENCE_THRESHOLD or not math.isfinite(H):
            tr.divergent = True
            return (False, z_new, None, -math.inf, None, None, None, None, None)
        dH = tr.H0 - H
        tr.sum_metro += 1.0 if dH > 0 else math.exp(dH)
        p_sharp = tr.inv_mass * z_new.p
        return (True, z_new, z_new, dH, z_new.p.copy(), z_new.p, z_new.p, p_sharp, p_sharp)

    (ok, z_mid, prop_init, lsw_init, rho_init, p_beg, p_init_end, ps_beg, ps_init_end) = _build_tree(
        tr, depth - 1, z, direction
    )
    if not ok:
        return (False, z_mid, None, -math.inf, None, None, None, None, None)
    (ok, z_end, prop_final, lsw_final, rho_final, p_final_beg, p_end, ps_final_beg, ps_end) = _build_tree(
        tr, depth - 1, z_mid, direction
    )
    if not ok:
        return (False, z_end, None, -math.inf, None, None, None, None, None)

    lsw = _logaddexp(lsw_init, lsw_final)
    proposal = prop_init
    if lsw_final > lsw or tr.rng.uniform() < math.exp(lsw_final - lsw):
        proposal = prop_final

    rho = rho_init + rho_final
    persist = _criterion(ps_beg, ps_end, rho)
    persist = persist and _criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
    persist = persist and _criterion(ps_init_end, ps_end, rho_final + p_init_end)
    return (persist, z_end, proposal, lsw, rho, p_beg, p_end, ps_beg, ps_end)


def sample_momentum(rng: np.random.Generator, inv_mass: np.ndarray) -> np.ndarray:
    return rng.standard_normal(inv_mass.size) / np.sqrt(inv_mass)


def nuts_transition(
    log_density,
    z0: Point,
    eps: float,
    inv_mass: np.ndarray,
    rng: np.random.Generator,
    max_depth: int = 10,
) -> tuple[Point, TransitionInfo]:
    p0 = sample_momentum(rng, inv_mass)
    z0 = Point(z0.q, p0, z0.logp, z0.grad)
    H0 = _hamiltonian(z0, inv_mass)
    tr = _Trajectory(log_density, eps, inv_mass, H0, rng)

    z_fwd = z_bck = z0
    sample = z0
    ps0 = inv_mass * p0
    p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = p0
    ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = ps0
    rho = p0.copy()
    log_sum_weight = 0.0
    depth = 0

    while depth < max_depth:
        if rng.uniform() > 0.5:
            rho_bck = rho
            p_bck_fwd, ps_bck_fwd = p_fwd_fwd, ps_fwd_fwd
            (ok, z_fwd, proposal, lsw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd, ps_fwd_bck, ps_fwd_fwd) = _build_tree(
                tr, depth, z_fwd, 1
            )
        else:
            rho_fwd = rho
            p_fwd_bck, ps_fwd_bck = p_bck_bck, ps_bck_bck
            (ok, z_bck, proposal, lsw_sub, rho_bck, p_bck_fwd, p_bck_bck, ps_bck_fwd, ps_bck_bck) = _build_tree(
                tr, depth, z_bck, -1
            )
        if not ok:
            break
        depth += 1
        if lsw_sub > log_sum_weight or rng.uniform() < math.exp(lsw_sub - log_sum_weight):
            sample = proposal
        log_sum_weight = _logaddexp(log_sum_weight, lsw_sub)

        rho = rho_bck + rho_fwd
        persist = _criterion(ps_bck_bck, ps_fwd_fwd, rho)
        persist = persist and _criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
        persist = persist and _criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
        if not persist:
            break

    n = max(tr.n_leapfrog, 1)
    info = TransitionInfo(
        accept_stat=tr.sum_metro / n,
        n_leapfrog=tr.n_leapfrog,
        depth=depth,
        divergent=tr.divergent,
        energy=_hamiltonian(Point(sample.q, sample.p, sample.logp, sample.grad), inv_mass),
    )
    return Point(sample.q, sample.p, sample.logp, sample.grad), info


def hmc_transition(
    log_density,
    z0: Point,
    eps: float,
    inv_mass: np.ndarray,
    rng: np.random.Generator,
    n_steps: int = 16,
) -> tuple[Point, TransitionInfo]:
    p0 = sample_momentum(rng, inv_mass)
    z = Point(z0.q, p0, z0.logp, z0.grad)
    H0 = _hamiltonian(z, inv_mass)
    divergent = False
    for _ in range(n_steps):
        z = leapfrog(log_density, z, eps, inv_mass)
        if _hamiltonian(z, inv_mass) - H0 > DIVERGENCE_THRESHOLD:
            divergent = True
            break
    H = _hamiltonian(z, inv_mass)
    accept = 0.0 if divergent else min(1.0, math.exp(min(0.0, H0 - H)))
    if rng.uniform() < accept:
        out = z
    else:
        out = Point(z0.q, p0, z0.logp, z0.grad)
    info = TransitionInfo(accept, n_steps, 0, divergent, _hamiltonian(out, inv_mass))
    return out, info

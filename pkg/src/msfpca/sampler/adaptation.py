"""Warmup adaptation: dual-averaging step size and windowed diagonal metric."""

from __future__ import annotations

import math

import numpy as np

from .nuts import Point, _hamiltonian, leapfrog, sample_momentum


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` toward a target
    acceptance statistic."""

    def __init__(self, eps0: float, target: float = 0.8, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(eps0)

    def restart(self, eps0: float) -> None:
        self.mu = math.log(10.0 * eps0)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.eps = eps0

    def update(self, accept_stat: float) -> float:
        accept_stat = min(1.0, accept_stat) if math.isfinite(accept_stat) else 0.0
        self.counter += 1
        t = self.counter
        eta = 1.0 / (t + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(t) / self.gamma
        x_eta = t ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        self.eps = math.exp(x)
        return self.eps

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


class Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        return self.m2 / max(self.n - 1, 1)


def regularized_variance(w: Welford) -> np.ndarray:
    """Sample variance shrunk toward 1e-3, as in the usual diagonal metric
    adaptation."""
    n = w.n
    return (n / (n + 5.0)) * w.variance() + 1e-3 * (5.0 / (n + 5.0))


def warmup_windows(n_warmup: int, init_frac: float = 0.15, term_frac: float = 0.10, base: int = 25) -> list[int]:
    """Iteration indices (exclusive ends) at which metric windows close.

    The first ``init_frac`` of warmup adapts the step size only, the last
    ``term_frac`` polishes the step size with the final metric; the middle
    is split into doubling windows starting at ``base`` iterations, the last
    window absorbing the remainder.
    """
    init = int(round(init_frac * n_warmup))
    term = int(round(term_frac * n_warmup))
    end_slow = n_warmup - term
    if end_slow - init < 20:
        return []
    base = min(base, max((end_slow - init) // 4, 1))
    ends = []
    start, size = init, base
    while start < end_slow:
        stop = start + size
        if stop + 2 * size > end_slow:
            stop = end_slow
        ends.append(stop)
        start, size = stop, 2 * size
    return ends


def find_reasonable_step_size(log_density, q, logp, grad, inv_mass, rng, eps: float = 1.0) -> float:
    """Double or halve ``eps`` until a single leapfrog step's acceptance
    crosses 0.8."""
    p = sample_momentum(rng, inv_mass)
    z0 = Point(q, p, logp, grad)
    H0 = _hamiltonian(z0, inv_mass)

    def delta(e):
        h = _hamiltonian(leapfrog(log_density, z0, e, inv_mass), inv_mass)
        return H0 - h if math.isfinite(h) else -math.inf

    threshold = math.log(0.8)
    direction = 1 if delta(eps) > threshold else -1
    for _ in range(60):
        d = delta(eps)
        if direction == 1 and not d > threshold:
            break
        if direction == -1 and not d < threshold:
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
    return eps

"""Multi-chain driver: initialization, warmup adaptation and sampling."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteDensity
from .adaptation import DualAveraging, Welford, find_reasonable_step_size, regularized_variance, warmup_windows
from .nuts import Point, hmc_transition, nuts_transition

log = logging.getLogger(__name__)

INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings.

    ``algorithm`` is ``"nuts"`` (dynamic trajectories up to ``max_tree_depth``
    doublings) or ``"hmc"`` (``n_leapfrog`` fixed steps).
    """

    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    algorithm: str = "nuts"
    n_leapfrog: int = 16
    init_radius: float = 2.0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.sampling_iters <= 0 or self.warmup_iters < 0:
            raise ValueError("iteration counts must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.algorithm not in ("nuts", "hmc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class Draws:
    """Post-warmup draws with per-iteration sampler statistics.

    ``samples`` has shape ``(chains, iters, dim)``; the statistics arrays
    have shape ``(chains, iters)``.
    """

    samples: np.ndarray
    logp: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    inv_mass: np.ndarray
    names: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_iters(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    @property
    def n_divergent(self) -> np.ndarray:
        return self.divergent.sum(axis=1)

    def flat(self) -> np.ndarray:
        """Samples pooled over chains, shape ``(chains * iters, dim)``."""
        return self.samples.reshape(-1, self.dim)


def _initial_point(log_density, dim, rng, radius, init=None) -> Point:
    if init is not None:
        q = np.array(init, dtype=float)
        logp, grad = log_density(q)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return Point(q, np.zeros(dim), logp, grad)
        raise NonFiniteDensity("log density is not finite at the supplied initial point")
    for _ in range(INIT_ATTEMPTS):
        q = rng.uniform(-radius, radius, size=dim)
        logp, grad = log_density(q)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return Point(q, np.zeros(dim), logp, grad)
    raise NonFiniteDensity(f"no finite initial point after {INIT_ATTEMPTS} attempts")


def run_chain(log_density, dim: int, config: ChainConfig, seed, init=None, chain_id: int = 0) -> dict:
    """Run one chain; ``seed`` is anything accepted by ``np.random.default_rng``."""
    rng = np.random.default_rng(seed)
    z = _initial_point(log_density, dim, rng, config.init_radius, init)
    inv_mass = np.ones(dim)

    if config.algorithm == "nuts":
        def step(z, eps):
            return nuts_transition(log_density, z, eps, inv_mass, rng, config.max_tree_depth)
    else:
        def step(z, eps):
            return hmc_transition(log_density, z, eps, inv_mass, rng, config.n_leapfrog)

    W = config.warmup_iters
    eps = find_reasonable_step_size(log_density, z.q, z.logp, z.grad, inv_mass, rng)
    da = DualAveraging(eps, config.target_accept)
    window_ends = set(warmup_windows(W))
    slow_start = int(round(0.15 * W))
    slow_end = max(window_ends) if window_ends else -1
    acc = Welford(dim)

    for it in range(W):
        z, info = step(z, da.eps)
        da.update(info.accept_stat)
        if slow_start <= it < slow_end:
            acc.add(z.q)
        if it + 1 in window_ends:
            # in-place so the transition closures see the new metric
            inv_mass[:] = regularized_variance(acc)
            acc = Welford(dim)
            eps = find_reasonable_step_size(log_density, z.q, z.logp, z.grad, inv_mass, rng, da.eps)
            da.restart(eps)
    eps = da.final if W > 0 else eps
    log.debug("chain %d: warmup done, step size %.4g", chain_id, eps)

    S = config.sampling_iters
    out = {
        "samples": np.empty((S, dim)),
        "logp": np.empty(S),
        "accept_stat": np.empty(S),
        "n_leapfrog": np.empty(S, dtype=np.int64),
        "tree_depth": np.empty(S, dtype=np.int64),
        "divergent": np.empty(S, dtype=bool),
    }
    for it in range(S):
        z, info = step(z, eps)
        out["samples"][it] = z.q
        out["logp"][it] = z.logp
        out["accept_stat"][it] = info.accept_stat
        out["n_leapfrog"][it] = info.n_leapfrog
        out["tree_depth"][it] = info.depth
        out["divergent"][it] = info.divergent
    out["step_size"] = eps
    out["inv_mass"] = inv_mass.copy()
    return out


def _chain_task(args):
    log_density, dim, config, seed, init, c = args
    return run_chain(log_density, dim, config, seed, init, c)


def chain_seeds(seed: int, chains: int) -> list[np.random.SeedSequence]:
    """Independent per-chain seeds derived from the master seed."""
    return np.random.SeedSequence(seed).spawn(chains)


def run(config: ChainConfig, log_density, dim: int, *, inits=None, n_jobs: int = 1, names=None) -> Draws:
    """Sample ``config.chains`` chains from ``log_density``.

    Parameters
    ----------
    log_density : callable
        ``x -> (log density, gradient)``; must be picklable when ``n_jobs > 1``.
    dim : int
        Dimension of the unconstrained space.
    inits : sequence of arrays, optional
        One initial point per chain; uniform on ``(-2, 2)`` otherwise.
    n_jobs : int
        Worker processes; results do not depend on it.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    seeds = chain_seeds(config.seed, config.chains)
    inits = inits if inits is not None else [None] * config.chains
    tasks = [(log_density, dim, config, seeds[c], inits[c], c) for c in range(config.chains)]
    if n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, config.chains)) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]

    stack = lambda key: np.stack([r[key] for r in results])  # noqa: E731
    return Draws(
        samples=stack("samples"),
        logp=stack("logp"),
        accept_stat=stack("accept_stat"),
        n_leapfrog=stack("n_leapfrog"),
        tree_depth=stack("tree_depth"),
        divergent=stack("divergent"),
        step_size=np.array([r["step_size"] for r in results]),
        inv_mass=stack("inv_mass"),
        names=list(names) if names is not None else [f"x[{j}]" for j in range(dim)],
    )

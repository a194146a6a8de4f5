"""Synthetic sparse multi-block trajectories with known score covariance.

Four score-correlation scenarios over the components
``(b1.pc1, b1.pc2, b2.pc1, b2.pc2, b3.pc1)``:

* I   : all components independent;
* II  : r(b2.pc1, b3.pc1) = 0.75;
* III : II plus r(b1.pc1, b2.pc1) = 0.5;
* IV  : III plus r(b1.pc2, b3.pc1) = 0.25.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .association import association
from .basis import evaluate
from .covariance import BlockStructure
from .dataset import MultiBlockDataset
from .model import ModelSpec

SCENARIOS = ("I", "II", "III", "IV")
DEFAULT_K = (2, 2, 1)
DEFAULT_Q = (6, 5, 5)
DEFAULT_SDS = (2.0, 1.0, 2.0, 1.0, 1.5)
DEFAULT_SIGMA_EPS = 0.5

# (row, col) -> correlation, indices into the default (2, 2, 1) layout
_PLACEMENTS = {
    "I": {},
    "II": {(2, 4): 0.75},
    "III": {(0, 2): 0.5, (2, 4): 0.75},
    "IV": {(0, 2): 0.5, (2, 4): 0.75, (1, 4): 0.25},
}

# smooth mean curves on [0, 1], projected onto each block's basis
_MEAN_FUNCTIONS = (
    lambda t: 2.2 + 0.6 * np.sin(2 * np.pi * t),
    lambda t: -2.4 + 0.5 * np.cos(2 * np.pi * t),
    lambda t: 1.8 - 0.8 * (t - 0.5) ** 2 + 0.3 * t,
)
_LOADING_SEED = 20210


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "I"
    n_subjects: int = 100
    n_timepoints: int = 10
    mean_rate: float = 8.0
    n_components: tuple[int, ...] = DEFAULT_K
    n_basis: tuple[int, ...] = DEFAULT_Q
    seed: int = 0
    shared_counts: bool = False
    min_obs: int = 2

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.mean_rate > self.n_timepoints:
            raise ValueError("mean_rate cannot exceed n_timepoints")

    def model_spec(self, **kw) -> ModelSpec:
        return ModelSpec.build(self.n_components, self.n_basis, **kw)


@dataclass
class ScenarioTruth:
    """True parameters of a scenario and its association truth tables.

    ``mi`` and ``cmi`` map block pairs ``(p1, p2)`` to normalized values.
    """

    scenario: str
    sigma: np.ndarray
    R: np.ndarray
    sds: np.ndarray
    theta_mu: np.ndarray
    theta: list[np.ndarray]
    sigma_eps: float
    structure: BlockStructure
    mi: dict = field(default_factory=dict)
    cmi: dict = field(default_factory=dict)


def scenario_correlation(scenario: str) -> np.ndarray:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    R = np.eye(5)
    for (i, j), r in _PLACEMENTS[scenario].items():
        R[i, j] = R[j, i] = r
    return R


def default_truth_parameters(n_components=DEFAULT_K, n_basis=DEFAULT_Q, spec: ModelSpec | None = None):
    """Deterministic synthetic ``(theta_mu, [Theta_p], sigma_eps)``.

    Mean coefficients are projections of fixed smooth curves onto each
    block's orthonormal basis; loadings are orthonormalized Gaussian
    matrices drawn from a fixed seed per block.
    """
    spec = spec or ModelSpec.build(n_components, n_basis)
    theta_mu, theta = [], []
    for p, blk in enumerate(spec.blocks):
        grid = blk.basis.grid
        phi = evaluate(blk.basis, grid)
        f = _MEAN_FUNCTIONS[p % len(_MEAN_FUNCTIONS)]
        theta_mu.append(phi.T @ f(grid) / grid.size)
        g = np.random.default_rng(_LOADING_SEED + p).standard_normal((blk.n_basis, blk.n_components))
        q, r = np.linalg.qr(g)
        theta.append(q * np.sign(np.diag(r)))
    return np.concatenate(theta_mu), theta, DEFAULT_SIGMA_EPS


def scenario_sigma(scenario: str, sds=DEFAULT_SDS, spec: ModelSpec | None = None) -> ScenarioTruth:
    """Score covariance ``S R S`` of a scenario plus its MI / CMI truths."""
    R = scenario_correlation(scenario)
    sds = np.asarray(sds, dtype=float)
    sigma = np.outer(sds, sds) * R
    structure = BlockStructure(DEFAULT_K)
    theta_mu, theta, sigma_eps = default_truth_parameters(spec=spec)
    truth = ScenarioTruth(
        scenario=scenario,
        sigma=sigma,
        R=R,
        sds=sds,
        theta_mu=theta_mu,
        theta=theta,
        sigma_eps=sigma_eps,
        structure=structure,
    )
    for pair in combinations(range(structure.n_blocks), 2):
        truth.mi[pair] = association(R, structure, *pair, kind="marginal")
        truth.cmi[pair] = association(R, structure, *pair, kind="conditional")
    return truth


def _sqrt_psd(sigma: np.ndarray) -> np.ndarray:
    """Cholesky factor, or a symmetric square root when ``sigma`` is only
    semi-definite (e.g. zero for the noiseless limit)."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(sigma)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _draw_counts(rng, spec: ScenarioSpec, n_blocks: int) -> np.ndarray:
    shape = (spec.n_subjects, 1 if spec.shared_counts else n_blocks)
    n = np.clip(rng.poisson(spec.mean_rate, size=shape), spec.min_obs, spec.n_timepoints)
    return np.broadcast_to(n, (spec.n_subjects, n_blocks))


def simulate_dataset(
    spec: ScenarioSpec,
    truth: ScenarioTruth,
    *,
    sigma: np.ndarray | None = None,
    sigma_eps: float | None = None,
) -> MultiBlockDataset:
    """Simulate one sparse dataset from the model with the given truth.

    Per subject and block, the number of observations is Poisson(mean_rate)
    clipped to ``[min_obs, n_timepoints]``; observation times are drawn
    without replacement from ``n_timepoints`` equally spaced locations on
    [0, 1].  ``sigma`` and ``sigma_eps`` override the truth (e.g. zero for
    the noiseless limit).
    """
    model = spec.model_spec()
    rng = np.random.default_rng(spec.seed)
    P = model.n_blocks
    struct = model.structure
    sigma = truth.sigma if sigma is None else np.asarray(sigma, dtype=float)
    sigma_eps = truth.sigma_eps if sigma_eps is None else float(sigma_eps)

    candidates = np.linspace(0.0, 1.0, spec.n_timepoints)
    counts = _draw_counts(rng, spec, P)
    alpha = rng.standard_normal((spec.n_subjects, struct.total)) @ _sqrt_psd(sigma).T
    q_off = model.basis_offsets

    times, values = [], []
    for i in range(spec.n_subjects):
        row_t, row_v = [], []
        for p, blk in enumerate(model.blocks):
            t = np.sort(rng.choice(candidates, size=counts[i, p], replace=False))
            phi = evaluate(blk.basis, t)
            coef = truth.theta_mu[q_off[p] : q_off[p + 1]] + truth.theta[p] @ alpha[i, struct.slice(p)]
            y = phi @ coef + sigma_eps * rng.standard_normal(t.size)
            row_t.append(t)
            row_v.append(y)
        times.append(tuple(row_t))
        values.append(tuple(row_v))

    width = len(str(spec.n_subjects))
    return MultiBlockDataset(
        blocks=tuple(f"b{p + 1}" for p in range(P)),
        subjects=tuple(f"s{i + 1:0{width}d}" for i in range(spec.n_subjects)),
        times=tuple(times),
        values=tuple(values),
        time_range=(0.0, 1.0),
        rescaled=True,
    )


def write_truth_csv(truth: ScenarioTruth, path: str | Path) -> None:
    """Truth table: covariance entries (lower triangle) and MI / CMI values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "truth"])
        K = truth.sigma.shape[0]
        for i in range(K):
            for j in range(i + 1):
                w.writerow([f"sigma[{i},{j}]", f"{truth.sigma[i, j]:.6f}"])
        for (a, b), v in truth.mi.items():
            w.writerow([f"MI{a + 1}{b + 1}", f"{v:.6f}"])
        for (a, b), v in truth.cmi.items():
            w.writerow([f"CMI{a + 1}{b + 1}", f"{v:.6f}"])

"""Simulation study harness: coverage, association recovery, curve recovery.

Each replicate simulates a dataset, fits it, and reduces the posterior to a
small JSON summary stored under ``<out>/runs/<scenario>/<rep>/`` together
with the data and the draws, so reports can be rebuilt without refitting.
Replicates whose identified quantities have any R-hat above
``RHAT_LIMIT`` are excluded from coverage denominators.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .association import posterior_association
from .basis import evaluate
from .dataset import write_csv
from .errors import MsfpcaError
from .pipeline import fit, identified_rhat, max_rhat
from .posterior import PosteriorSample, summarize_curves
from .sampler import ChainConfig, save_draws
from .simulate import ScenarioSpec, ScenarioTruth, scenario_sigma, simulate_dataset

log = logging.getLogger(__name__)

RHAT_LIMIT = 1.05
SUMMARY_FILE = "result.json"


@dataclass(frozen=True)
class FitConfig:
    """Sampler and model settings applied to every replicate."""

    chains: int = 2
    warmup_iters: int = 500
    sampling_iters: int = 500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    parameterization: str = "centered"
    n_subjects: int = 100
    save_draws: bool = True

    def chain_config(self, seed: int) -> ChainConfig:
        return ChainConfig(
            chains=self.chains,
            warmup_iters=self.warmup_iters,
            sampling_iters=self.sampling_iters,
            seed=seed,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
        )


def replicate_seeds(master_seed: int, rep: int) -> tuple[int, int]:
    """``(data seed, sampler seed)`` of replicate ``rep``, derived by counter."""
    a, b = np.random.SeedSequence([int(master_seed), int(rep)]).generate_state(2, dtype=np.uint32)
    return int(a), int(b)


def _interval(values: np.ndarray, level: float = 0.95) -> list[float]:
    a = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(values, [a, 0.5, 1.0 - a])
    return [float(med), float(lo), float(hi)]


def curve_errors(sample: PosteriorSample, truth: ScenarioTruth, grid=None) -> dict:
    """Relative L2 errors of posterior-median mean and FPC curves per block.

    FPC errors take the smaller of the two sign choices.
    """
    fm = summarize_curves(sample, grid)
    spec = sample.spec
    mean_err, fpc_err = [], []
    for p, blk in enumerate(spec.blocks):
        phi = evaluate(blk.basis, fm.grid)
        true_mean = phi @ truth.theta_mu[spec.basis_offsets[p] : spec.basis_offsets[p + 1]]
        mean_err.append(float(np.linalg.norm(fm.mean_curves[p].median - true_mean) / np.linalg.norm(true_mean)))
        errs = []
        for k in range(blk.n_components):
            true_fpc = phi @ truth.theta[p][:, k]
            est = fm.fpc_curves[p][k].median
            errs.append(float(min(np.linalg.norm(est - s * true_fpc) for s in (1.0, -1.0)) / np.linalg.norm(true_fpc)))
        fpc_err.append(errs)
    return {"mean": mean_err, "fpc": fpc_err}


def summarize_replicate(sample: PosteriorSample, truth: ScenarioTruth) -> dict:
    """Posterior medians and 95% intervals of the quantities under study."""
    K = sample.structure.total
    sigma = {}
    for i in range(K):
        for j in range(i + 1):
            if i != j and sample.structure.block_of[i] == sample.structure.block_of[j]:
                continue
            sigma[f"{i + 1},{j + 1}"] = _interval(sample.sigma[:, i, j])
    assoc = {}
    for kind in ("marginal", "conditional"):
        for e in posterior_association(sample.correlation, sample.structure, kind=kind):
            assoc[f"{kind}:{e.pair[0] + 1},{e.pair[1] + 1}"] = [e.median, e.lo, e.hi]
    rh = identified_rhat(sample)
    return {
        "sigma": sigma,
        "association": assoc,
        "sigma_eps": _interval(sample.sigma_eps[:, 0]),
        "curves": curve_errors(sample, truth),
        "rhat": rh,
        "max_rhat": max_rhat(rh),
    }


def run_replicate(scenario: str, rep: int, master_seed: int, config: FitConfig, out_dir: str | Path | None) -> dict:
    """Simulate, fit and summarize one replicate (or load its stored summary)."""
    data_seed, chain_seed = replicate_seeds(master_seed, rep)
    key = {"scenario": scenario, "rep": rep, "master_seed": master_seed, "config": asdict(config)}
    rep_dir = Path(out_dir) / "runs" / scenario / f"{rep:04d}" if out_dir is not None else None
    if rep_dir is not None and (rep_dir / SUMMARY_FILE).exists():
        stored = json.loads((rep_dir / SUMMARY_FILE).read_text())
        if stored.get("key") == key:
            return stored
    truth = scenario_sigma(scenario)
    sspec = ScenarioSpec(scenario, n_subjects=config.n_subjects, seed=data_seed)
    result = {"key": key, "data_seed": data_seed, "chain_seed": chain_seed}
    t0 = time.perf_counter()
    try:
        data = simulate_dataset(sspec, truth)
        spec = sspec.model_spec(parameterization=config.parameterization)
        res = fit(data, spec, config.chain_config(chain_seed), reference=truth.theta)
        result.update(summarize_replicate(res.sample, truth))
        result["n_divergent"] = int(res.draws.n_divergent.sum())
        result["error"] = None
        if rep_dir is not None:
            rep_dir.mkdir(parents=True, exist_ok=True)
            write_csv(data, rep_dir / "data.csv")
            if config.save_draws:
                save_draws(res.draws, rep_dir / "draws.bin", extra={"scenario": scenario, "rep": rep})
    except (MsfpcaError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", rep, exc)
        result["error"] = f"{type(exc).__name__}: {exc}"
        result["traceback"] = traceback.format_exc()
    result["seconds"] = time.perf_counter() - t0
    if rep_dir is not None:
        rep_dir.mkdir(parents=True, exist_ok=True)
        (rep_dir / SUMMARY_FILE).write_text(json.dumps(result, indent=1, sort_keys=True))
    return result


def _task(args):
    return run_replicate(*args)


@dataclass
class CoverageRow:
    name: str
    truth: float
    coverage: float  # NaN for zero-truth association rows (reported as 0*)
    mean_median: float
    n: int


@dataclass
class CoverageReport:
    scenario: str
    replicates: int
    results: list[dict]
    covariance: list[CoverageRow] = field(default_factory=list)
    association: list[CoverageRow] = field(default_factory=list)

    @property
    def successful(self) -> list[dict]:
        return [r for r in self.results if r.get("error") is None and _converged(r)]

    @property
    def n_failed(self) -> int:
        return sum(r.get("error") is not None for r in self.results)

    @property
    def n_excluded(self) -> int:
        return sum(r.get("error") is None and not _converged(r) for r in self.results)

    @property
    def average_covariance_coverage(self) -> float:
        vals = [row.coverage for row in self.covariance if np.isfinite(row.coverage)]
        return float(np.mean(vals)) if vals else float("nan")

    def medians(self, key: str, converged_only: bool = False) -> np.ndarray:
        """Posterior medians of an association key (e.g. ``"marginal:1,2"``)
        across replicates that ran."""
        pool = self.successful if converged_only else [r for r in self.results if r.get("error") is None]
        return np.array([r["association"][key][0] for r in pool])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "truth", "coverage", "mean_median", "n"])
            for row in self.covariance + self.association:
                cov = "0*" if not np.isfinite(row.coverage) else f"{row.coverage:.4f}"
                w.writerow([row.name, f"{row.truth:.6f}", cov, f"{row.mean_median:.6f}", row.n])

    def text(self) -> str:
        lines = [
            f"scenario {self.scenario}: {self.replicates} replicates, {len(self.successful)} used, "
            f"{self.n_excluded} excluded (R-hat > {RHAT_LIMIT}), {self.n_failed} failed",
            f"average covariance-parameter coverage: {self.average_covariance_coverage:.3f}",
            "association (median of posterior medians, coverage):",
        ]
        for row in self.association:
            cov = "0*" if not np.isfinite(row.coverage) else f"{row.coverage:.2f}"
            lines.append(f"  {row.name:<16} truth {row.truth:.2f}  median {row.mean_median:.3f}  coverage {cov}")
        return "\n".join(lines) + "\n"


def _converged(result: dict) -> bool:
    m = result.get("max_rhat")
    return m is not None and np.isfinite(m) and m <= RHAT_LIMIT


def build_report(scenario: str, results: list[dict]) -> CoverageReport:
    truth = scenario_sigma(scenario)
    report = CoverageReport(scenario, len(results), results)
    ok = report.successful
    K = truth.sigma.shape[0]
    for i in range(K):
        for j in range(i + 1):
            key = f"{i + 1},{j + 1}"
            if not ok or key not in ok[0]["sigma"]:
                continue
            t = float(truth.sigma[i, j])
            rows = [r["sigma"][key] for r in ok]
            cover = np.mean([lo <= t <= hi for _, lo, hi in rows])
            report.covariance.append(CoverageRow(f"sigma[{key}]", t, float(cover), float(np.mean([m for m, _, _ in rows])), len(ok)))
    for kind, table in (("marginal", truth.mi), ("conditional", truth.cmi)):
        for a, b in combinations(range(truth.structure.n_blocks), 2):
            key = f"{kind}:{a + 1},{b + 1}"
            t = float(table[(a, b)])
            rows = [r["association"][key] for r in ok]
            if not rows:
                continue
            # zero truth sits on the boundary of [0, 1]: the interval never covers it
            cover = float("nan") if t < 1e-12 else float(np.mean([lo <= t <= hi for _, lo, hi in rows]))
            name = ("MI" if kind == "marginal" else "CMI") + f"{a + 1}{b + 1}"
            report.association.append(CoverageRow(name, t, cover, float(np.median([m for m, _, _ in rows])), len(ok)))
    return report


def coverage_study(
    scenario: str,
    replicates: int,
    config: FitConfig | None = None,
    *,
    master_seed: int = 0,
    out_dir: str | Path | None = None,
    n_jobs: int = 1,
) -> CoverageReport:
    """Run (or reload) ``replicates`` simulate-fit-summarize cycles."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    config = config or FitConfig()
    tasks = [(scenario, r, master_seed, config, out_dir) for r in range(replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    report = build_report(scenario, results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / f"coverage_{scenario}.csv")
        (out / f"coverage_{scenario}.txt").write_text(report.text())
    return report


@dataclass
class CurveRecoveryReport:
    """Relative L2 curve errors averaged over replicates."""

    mean_error: np.ndarray  # (P,)
    fpc_error: list[np.ndarray]  # per block, (K_p,)
    per_replicate: list[dict]


def recovery_report(fits, truth: ScenarioTruth, grid=None) -> CurveRecoveryReport:
    """Curve recovery over replicate fits.

    ``fits`` holds :class:`~msfpca.pipeline.FitResult` or
    :class:`~msfpca.posterior.PosteriorSample` objects, or stored replicate
    summaries (dicts with a ``"curves"`` entry).
    """
    per = []
    for f in fits:
        if isinstance(f, dict):
            per.append(f["curves"])
        else:
            per.append(curve_errors(getattr(f, "sample", f), truth, grid))
    mean = np.mean([c["mean"] for c in per], axis=0)
    P = len(per[0]["fpc"])
    fpc = [np.mean([c["fpc"][p] for c in per], axis=0) for p in range(P)]
    return CurveRecoveryReport(mean, fpc, per)

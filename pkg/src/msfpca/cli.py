"""Command-line interface.

Commands: ``simulate``, ``fit``, ``summarize``, ``mi``, ``loo``, ``ppc`` and
``coverage``.  A fit writes a run directory::

    run/
      spec.toml          resolved model and sampler settings
      dataset.json       the standardized data the model saw
      draws.bin          posterior draws (unconstrained coordinates)
      draws_meta.txt     layout and sampler statistics
      report.txt         human-readable report
      summary/*.csv      tables written by the other commands

Errors are printed as one line ``error: <Code>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dataset as ds_mod
from .association import posterior_association, write_association_csv
from .diagnostics import (
    K_BAD,
    K_GOOD,
    pointwise_loglik,
    posterior_predictive,
    psis_loo,
    write_loo_csv,
    write_ppc_csv,
)
from .errors import ConfigParse, MsfpcaError, SpecMismatch
from .experiments import FitConfig, coverage_study
from .model import ModelSpec, MsfpcaModel
from .pipeline import FitResult, fit, identified_rhat, max_rhat
from .posterior import posterior_sample, summarize_curves, write_covariance_csv, write_curves_csv
from .sampler import ChainConfig, load_draws, save_draws
from .simulate import SCENARIOS, ScenarioSpec, scenario_sigma, simulate_dataset, write_truth_csv

log = logging.getLogger("msfpca")

_MODEL_KEYS = {"n_components", "n_basis", "per_block_sigma", "parameterization", "diag_scale", "diag_shift", "grid_size"}
_SAMPLER_KEYS = {"chains", "warmup_iters", "sampling_iters", "seed", "target_accept", "max_tree_depth", "algorithm", "n_leapfrog"}


@dataclass
class RunSpec:
    """Parsed ``spec.toml``: model dimensions, sampler settings, optional sweep."""

    model: dict
    sampler: dict
    sweep: dict

    def model_spec(self, n_components=None, n_basis=None) -> ModelSpec:
        m = dict(self.model)
        K = tuple(n_components or m.pop("n_components"))
        Q = tuple(n_basis or m.pop("n_basis"))
        m.pop("n_components", None)
        m.pop("n_basis", None)
        try:
            return ModelSpec.build(K, Q, **m)
        except (ValueError, TypeError) as exc:
            raise ConfigParse(f"invalid model section: {exc}") from None

    def chain_config(self) -> ChainConfig:
        try:
            return ChainConfig(**self.sampler)
        except (ValueError, TypeError) as exc:
            raise ConfigParse(f"invalid sampler section: {exc}") from None

    def to_toml(self) -> str:
        lines = ["[model]"]
        lines += [f"{k} = {_toml_value(v)}" for k, v in sorted(self.model.items())]
        lines += ["", "[sampler]"]
        lines += [f"{k} = {_toml_value(v)}" for k, v in sorted(self.sampler.items())]
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def read_spec(path: str | Path) -> RunSpec:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParse(f"{path}: {exc}") from None
    model = dict(doc.get("model", {}))
    sampler = dict(doc.get("sampler", {}))
    sweep = dict(doc.get("sweep", {}))
    unknown = (set(model) - _MODEL_KEYS) | (set(sampler) - _SAMPLER_KEYS)
    if unknown:
        raise ConfigParse(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("n_components", "n_basis"):
        if key not in model:
            raise ConfigParse(f"{path}: [model] needs '{key}'")
        if not isinstance(model[key], list) or not all(isinstance(x, int) for x in model[key]):
            raise ConfigParse(f"{path}: [model].{key} must be a list of integers")
    if len(model["n_components"]) != len(model["n_basis"]):
        raise ConfigParse(f"{path}: n_components and n_basis differ in length")
    return RunSpec(model, sampler, sweep)


# ---------------------------------------------------------------- run dirs


def _write_meta(run: Path, res: FitResult) -> None:
    d = res.draws
    lines = [
        "format = MSFPDRW1",
        f"dim = {d.dim}",
        f"chains = {d.n_chains}",
        f"iters = {d.n_iters}",
        f"subjects = {res.model.design.n_subjects}",
        f"blocks = {','.join(res.model.dataset.blocks)}",
        f"step_size = {','.join(f'{e:.6g}' for e in d.step_size)}",
        f"divergent = {','.join(str(int(n)) for n in d.n_divergent)}",
        f"mean_tree_depth = {','.join(f'{x:.3f}' for x in d.tree_depth.mean(axis=1))}",
        "",
        "# coordinate layout (index name)",
    ]
    lines += [f"{j} {name}" for j, name in enumerate(d.names)]
    (run / "draws_meta.txt").write_text("\n".join(lines) + "\n")


def _fit_report(res: FitResult) -> str:
    d = res.draws
    rh = identified_rhat(res.sample)
    lines = [
        f"subjects: {res.model.design.n_subjects}, blocks: {', '.join(res.model.dataset.blocks)}",
        f"components: {res.spec.n_components}, basis sizes: {res.spec.n_basis}",
        f"chains: {d.n_chains} x {d.n_iters} draws, divergent transitions: {int(d.n_divergent.sum())}",
        f"max R-hat (identified quantities): {max_rhat(rh):.4f}" if rh else "max R-hat: n/a (single chain)",
        f"residual sd (median): {np.median(res.sample.sigma_eps, axis=0).round(4).tolist()}",
    ]
    for p, b in enumerate(res.model.dataset.blocks):
        ev = res.sample.eigenvalues(p)
        frac = np.median(ev / ev.sum(axis=1, keepdims=True), axis=0)
        lines.append(f"explained variance {b}: {', '.join(f'{x:.3f}' for x in frac)}")
    return "\n".join(lines) + "\n"


def _check_blocks(data, spec: ModelSpec) -> None:
    if data.n_blocks != spec.n_blocks:
        raise SpecMismatch(f"data has {data.n_blocks} blocks but the spec describes {spec.n_blocks}")


def _fit_into(run: Path, data, rs: RunSpec, spec: ModelSpec, n_jobs: int) -> FitResult:
    _check_blocks(data, spec)
    run.mkdir(parents=True, exist_ok=True)
    res = fit(data, spec, rs.chain_config(), n_jobs=n_jobs)
    resolved = RunSpec(
        {**rs.model, "n_components": list(spec.n_components), "n_basis": list(spec.n_basis)}, rs.sampler, {}
    )
    (run / "spec.toml").write_text(resolved.to_toml())
    ds_mod.save_json(data, run / "dataset.json")
    save_draws(res.draws, run / "draws.bin")
    _write_meta(run, res)
    (run / "report.txt").write_text(_fit_report(res))
    return res


def load_run(run: str | Path) -> FitResult:
    run = Path(run)
    for name in ("spec.toml", "dataset.json", "draws.bin"):
        if not (run / name).exists():
            raise FileNotFoundError(f"{run / name} not found")
    rs = read_spec(run / "spec.toml")
    spec = rs.model_spec()
    data = ds_mod.load_json(run / "dataset.json")
    _check_blocks(data, spec)
    model = MsfpcaModel(data, spec)
    draws = load_draws(run / "draws.bin")
    if draws.dim != model.dim:
        raise SpecMismatch(f"draws have dimension {draws.dim}, the model needs {model.dim}")
    return FitResult(model, draws, posterior_sample(draws, model))


def _summary_dir(run: Path) -> Path:
    out = Path(run) / "summary"
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> None:
    spec = ScenarioSpec(args.scenario, n_subjects=args.n_subjects, seed=args.seed, shared_counts=args.shared_counts)
    truth = scenario_sigma(args.scenario)
    data = simulate_dataset(spec, truth)
    ds_mod.write_csv(data, args.out)
    if args.truth:
        write_truth_csv(truth, args.truth)
    print(f"wrote {data.n_subjects} subjects x {data.n_blocks} blocks to {args.out}")


def _apply_overrides(rs: RunSpec, args) -> RunSpec:
    sampler = dict(rs.sampler)
    if args.chains is not None:
        sampler["chains"] = args.chains
    if args.iters is not None:
        sampler["warmup_iters"] = args.iters // 2
        sampler["sampling_iters"] = args.iters - args.iters // 2
    if args.seed is not None:
        sampler["seed"] = args.seed
    return RunSpec(rs.model, sampler, rs.sweep)


def cmd_fit(args) -> None:
    rs = _apply_overrides(read_spec(args.spec), args)
    data = ds_mod.standardize_and_rescale(ds_mod.read_csv(args.data))
    out = Path(args.out)
    if not args.sweep:
        _fit_into(out, data, rs, rs.model_spec(), args.threads)
        print((out / "report.txt").read_text(), end="")
        return
    Ks = rs.sweep.get("n_components", [rs.model["n_components"]])
    Qs = rs.sweep.get("n_basis", [rs.model["n_basis"]])
    rows = []
    for K, Q in itertools.product(Ks, Qs):
        if len(K) != len(Q) or any(k >= q for k, q in zip(K, Q)):
            continue
        label = "K" + "-".join(map(str, K)) + "_Q" + "-".join(map(str, Q))
        res = _fit_into(out / "candidates" / label, data, rs, rs.model_spec(K, Q), args.threads)
        loo = psis_loo(pointwise_loglik(res.sample, res.model, kind="marginal"))
        rows.append((loo.elpd_loo, loo.se_elpd, label, loo.k_counts()["bad"]))
    if not rows:
        raise ConfigParse("sweep has no valid (n_components, n_basis) candidates")
    rows.sort(key=lambda r: -r[0])
    lines = ["rank,candidate,elpd_loo,se,n_k_above_0.7"]
    lines += [f"{i + 1},{lab},{e:.4f},{se:.4f},{nb}" for i, (e, se, lab, nb) in enumerate(rows)]
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_summarize(args) -> None:
    res = load_run(args.run)
    grid = np.linspace(0.0, 1.0, args.grid)
    fm = summarize_curves(res.sample, grid)
    out = _summary_dir(args.run)
    write_curves_csv(fm, out / "curves.csv", list(res.model.dataset.blocks))
    write_covariance_csv(res.sample, out / "covariance.csv")
    text = _fit_report(res)
    (Path(args.run) / "report.txt").write_text(text)
    print(text, end="")


def cmd_mi(args) -> None:
    res = load_run(args.run)
    kinds = ("marginal", "conditional") if args.kind == "both" else (args.kind,)
    names = list(res.model.dataset.blocks)
    estimates = []
    for kind in kinds:
        estimates += posterior_association(res.sample.correlation, res.sample.structure, kind=kind)
    write_association_csv(estimates, _summary_dir(args.run) / "association.csv", names)
    for e in estimates:
        a, b = names[e.pair[0]], names[e.pair[1]]
        print(f"{e.kind:<11} {a}-{b}: median {e.median:.3f}  95% [{e.lo:.3f}, {e.hi:.3f}]")


def cmd_loo(args) -> None:
    res = load_run(args.run)
    report = psis_loo(pointwise_loglik(res.sample, res.model, kind=args.likelihood))
    write_loo_csv(report, _summary_dir(args.run) / "loo.csv", list(res.model.dataset.subjects))
    c = report.k_counts()
    print(f"elpd_loo = {report.elpd_loo:.3f} +/- {report.se_elpd:.3f}  (p_loo {report.p_loo:.2f})")
    print(f"pareto k: <{K_GOOD}: {c['good']}  {K_GOOD}-{K_BAD}: {c['ok']}  >{K_BAD}: {c['bad']}")


def cmd_ppc(args) -> None:
    res = load_run(args.run)
    ppc = posterior_predictive(res.sample, res.model, args.reps, seed=args.seed)
    write_ppc_csv(ppc, _summary_dir(args.run) / "ppc.csv")
    for p, b in enumerate(res.model.dataset.blocks):
        obs = ppc.observed[p].var()
        rep = ppc.replicates[p].var(axis=1).mean()
        print(f"{b}: observed variance {obs:.4f}, replicated {rep:.4f}")


def cmd_coverage(args) -> None:
    config = FitConfig(
        chains=args.chains,
        warmup_iters=args.warmup,
        sampling_iters=args.iters,
        n_subjects=args.n_subjects,
    )
    report = coverage_study(args.scenario, args.reps, config, master_seed=args.seed, out_dir=args.out, n_jobs=args.threads)
    print(report.text(), end="")


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msfpca", description="Multivariate sparse functional PCA")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario dataset")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-subjects", type=int, default=100)
    p.add_argument("--shared-counts", action="store_true", help="one observation count per subject for all blocks")
    p.add_argument("--truth", help="also write the truth table to this CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a dataset and write a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int, help="total iterations per chain, half of them warmup")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--sweep", action="store_true", help="fit every [sweep] candidate and rank by elpd_loo")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="curve and covariance summaries")
    p.add_argument("--run", required=True)
    p.add_argument("--grid", type=int, default=101)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("mi", help="normalized mutual information between blocks")
    p.add_argument("--run", required=True)
    p.add_argument("--kind", choices=("marginal", "conditional", "both"), default="both")
    p.set_defaults(func=cmd_mi)

    p = sub.add_parser("loo", help="PSIS-LOO over subjects")
    p.add_argument("--run", required=True)
    p.add_argument(
        "--likelihood",
        choices=("conditional", "marginal"),
        default="marginal",
        help="subject likelihood with the scores integrated out (default) or conditional on them",
    )
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("ppc", help="posterior predictive replicates")
    p.add_argument("--run", required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("coverage", help="simulation study")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--iters", type=int, default=500, help="sampling iterations per chain")
    p.add_argument("--n-subjects", type=int, default=100)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coverage)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except MsfpcaError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())

import json
import time

import numpy as np
import pytest

from msfpca.experiments import (
    FitConfig,
    build_report,
    coverage_study,
    curve_errors,
    recovery_report,
    replicate_seeds,
)
from msfpca.posterior import PosteriorSample
from msfpca.simulate import ScenarioSpec, scenario_sigma


def truth_sample(truth, S=4, flip=False):
    spec = ScenarioSpec().model_spec()
    loadings = [np.repeat(t[None], S, axis=0) for t in truth.theta]
    if flip:
        loadings = [-t for t in loadings]
    return PosteriorSample(
        spec=spec,
        theta_mu=np.repeat(truth.theta_mu[None], S, axis=0),
        loadings=loadings,
        sigma=np.repeat(truth.sigma[None], S, axis=0),
        scores=np.zeros((S, 3, 5)),
        sigma_eps=np.full((S, 1), truth.sigma_eps),
        rotated=True,
    )


def test_seeds():
    assert replicate_seeds(7, 3) == replicate_seeds(7, 3)
    assert len({replicate_seeds(7, r) for r in range(50)}) == 50
    assert replicate_seeds(7, 0) != replicate_seeds(8, 0)


def test_curve_errors_sign_invariant():
    truth = scenario_sigma("I")
    for flip in (False, True):
        err = curve_errors(truth_sample(truth, flip=flip), truth)
        assert np.allclose(err["mean"], 0, atol=1e-12)
        assert all(np.allclose(e, 0, atol=1e-12) for e in err["fpc"])
    rep = recovery_report([truth_sample(truth)], truth)
    assert rep.mean_error.shape == (3,) and len(rep.fpc_error) == 3


def fake_result(truth, inside, rhat=1.0, error=None):
    """Replicate summary whose intervals contain the truth or not."""
    K = 5
    sigma = {}
    for i in range(K):
        for j in range(i + 1):
            if i != j and truth.structure.block_of[i] == truth.structure.block_of[j]:
                continue
            t = truth.sigma[i, j]
            sigma[f"{i + 1},{j + 1}"] = [t, t - 1, t + 1] if inside else [t + 2, t + 1, t + 3]
    assoc = {}
    for kind, table in (("marginal", truth.mi), ("conditional", truth.cmi)):
        for (a, b), t in table.items():
            lo = max(t - 0.1, 0.01)
            assoc[f"{kind}:{a + 1},{b + 1}"] = [t + 0.02, lo, t + 0.1] if inside else [t + 0.3, t + 0.2, t + 0.4]
    return {"sigma": sigma, "association": assoc, "max_rhat": rhat, "error": error}


def test_build_report_counts_and_zero_truth(tmp_path):
    truth = scenario_sigma("III")
    results = [fake_result(truth, True)] * 3 + [fake_result(truth, False)]
    results += [fake_result(truth, True, rhat=1.2), {"error": "boom", "max_rhat": None}]
    rep = build_report("III", results)
    assert len(rep.successful) == 4 and rep.n_excluded == 1 and rep.n_failed == 1
    assert rep.average_covariance_coverage == pytest.approx(0.75)
    rows = {r.name: r for r in rep.association}
    assert np.isnan(rows["MI13"].coverage)  # truth 0 is reported as 0*
    assert rows["MI12"].coverage == pytest.approx(0.75)
    rep.write_csv(tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text()
    assert text.splitlines()[0] == "parameter,truth,coverage,mean_median,n"
    assert "MI13,0.000000,0*," in text
    assert "0*" in rep.text() and "1 excluded" in rep.text()
    assert rep.medians("marginal:1,2").size == 5


def test_coverage_study_persists_and_reloads(tmp_path):
    cfg = FitConfig(chains=2, warmup_iters=40, sampling_iters=40, n_subjects=15)
    t0 = time.perf_counter()
    rep = coverage_study("II", 2, cfg, master_seed=1, out_dir=tmp_path)
    first = time.perf_counter() - t0
    rep_dir = tmp_path / "runs" / "II" / "0000"
    for name in ("data.csv", "draws.bin", "result.json"):
        assert (rep_dir / name).exists()
    assert (tmp_path / "coverage_II.csv").exists() and (tmp_path / "coverage_II.txt").exists()
    csv1 = (tmp_path / "coverage_II.csv").read_bytes()
    stored = json.loads((rep_dir / "result.json").read_text())
    assert stored["error"] is None and len(stored["curves"]["mean"]) == 3
    t0 = time.perf_counter()
    rep2 = coverage_study("II", 2, cfg, master_seed=1, out_dir=tmp_path)
    assert time.perf_counter() - t0 < first / 5
    assert (tmp_path / "coverage_II.csv").read_bytes() == csv1
    assert rep2.text() == rep.text()
    with pytest.raises(ValueError):
        coverage_study("II", 0, cfg)

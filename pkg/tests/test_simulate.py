import numpy as np
import pytest

from msfpca.association import marginal_mi
from msfpca.basis import evaluate
from msfpca.simulate import (
    SCENARIOS,
    ScenarioSpec,
    default_truth_parameters,
    scenario_sigma,
    simulate_dataset,
    write_truth_csv,
)

PAIRS = [(0, 1), (0, 2), (1, 2)]
MI_TRUTH = {"I": (0, 0, 0), "II": (0, 0, 0.75), "III": (0.5, 0, 0.75), "IV": (0.5, 0.25, 0.75)}
CMI_TRUTH = {"III": (0.76, 0.66, 0.87), "IV": (0.81, 0.76, 0.89)}


@pytest.mark.parametrize("sc", SCENARIOS)
def test_truth_tables(sc):
    t = scenario_sigma(sc)
    assert np.linalg.eigvalsh(t.sigma).min() > 0
    np.testing.assert_allclose(t.sigma, np.diag(t.sds) @ t.R @ np.diag(t.sds))
    for p in range(3):
        sl = t.structure.slice(p)
        np.testing.assert_allclose(t.sigma[sl, sl], np.diag(np.diag(t.sigma[sl, sl])))
    assert [t.mi[p] for p in PAIRS] == pytest.approx(MI_TRUTH[sc], abs=1e-12)
    if sc in CMI_TRUTH:
        # agreement to two decimals; the exact III value 0.6547 is printed as 0.66
        assert [t.cmi[p] for p in PAIRS] == pytest.approx(CMI_TRUTH[sc], abs=0.01)
    if sc == "I":
        np.testing.assert_array_equal(t.R, np.eye(5))


def test_rejected_iv_placement():
    # the 0.25 on b1 pc1 instead of b1 pc2 gives CMI12 = 0.49, not 0.81
    from msfpca.association import conditional_mi, normalize

    t = scenario_sigma("IV")
    R = np.eye(5)
    R[0, 2] = R[2, 0] = 0.5
    R[2, 4] = R[4, 2] = 0.75
    R[0, 4] = R[4, 0] = 0.25
    assert round(normalize(conditional_mi(R, t.structure, 0, 1)), 2) == 0.49
    assert marginal_mi(R, t.structure, 0, 2) > 0


def test_default_truth():
    a = default_truth_parameters()
    b = default_truth_parameters()
    np.testing.assert_array_equal(a[0], b[0])
    for x, y in zip(a[1], b[1]):
        np.testing.assert_array_equal(x, y)
        np.testing.assert_allclose(x.T @ x, np.eye(x.shape[1]), atol=1e-10)
    assert a[2] == 0.5
    spec = ScenarioSpec().model_spec()
    grid = np.linspace(0, 1, 201)
    for p, blk in enumerate(spec.blocks):
        mu = evaluate(blk.basis, grid) @ a[0][spec.basis_offsets[p] : spec.basis_offsets[p + 1]]
        assert np.abs(mu).max() <= 3


def test_design_and_reproducibility():
    spec = ScenarioSpec("III", n_subjects=400, seed=3)
    truth = scenario_sigma("III")
    d1 = simulate_dataset(spec, truth)
    d2 = simulate_dataset(spec, truth)
    cand = np.linspace(0, 1, 10)
    counts = d1.counts()
    assert counts.min() >= 2 and counts.max() <= 10
    # Poisson(8) clipped to [2, 10] observes 75.8% of the grid in expectation
    assert abs(counts.mean() / 10 - 0.758) < 0.02
    for i in range(d1.n_subjects):
        for p in range(3):
            assert np.all(np.isin(d1.times[i][p], cand))
            np.testing.assert_array_equal(d1.values[i][p], d2.values[i][p])


def test_shared_counts():
    d = simulate_dataset(ScenarioSpec("I", n_subjects=30, shared_counts=True, seed=1), scenario_sigma("I"))
    c = d.counts()
    assert np.all(c == c[:, :1])


def test_noiseless_limit():
    spec = ScenarioSpec("II", n_subjects=20, seed=2)
    truth = scenario_sigma("II")
    d = simulate_dataset(spec, truth, sigma=np.zeros((5, 5)), sigma_eps=0.0)
    ms = spec.model_spec()
    for i in range(d.n_subjects):
        for p, blk in enumerate(ms.blocks):
            mu = evaluate(blk.basis, d.times[i][p]) @ truth.theta_mu[ms.basis_offsets[p] : ms.basis_offsets[p + 1]]
            np.testing.assert_allclose(d.values[i][p], mu, atol=1e-12)


def test_bad_spec():
    with pytest.raises(ValueError):
        ScenarioSpec("V")
    with pytest.raises(ValueError):
        ScenarioSpec(mean_rate=12)


def test_truth_csv(tmp_path):
    write_truth_csv(scenario_sigma("IV"), tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert text.startswith("parameter,truth\n") and "CMI12,0.81" in text

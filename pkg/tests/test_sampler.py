import numpy as np
import pytest

from msfpca.errors import InsufficientChains, NonFiniteDensity
from msfpca.sampler import ChainConfig, ess, load_draws, read_header, rhat, run, save_draws, write_draws_csv
from msfpca.sampler.adaptation import DualAveraging, warmup_windows

from conftest import GaussianTarget


def test_standard_normal_1d():
    d = run(ChainConfig(chains=4, warmup_iters=500, sampling_iters=2000, seed=11), GaussianTarget([0.0], [[1.0]]), 1)
    x = d.samples[..., 0]
    assert abs(x.mean()) <= 0.05
    assert 0.9 <= x.var() <= 1.1
    assert d.n_divergent.sum() == 0


def test_correlated_2d():
    cov = [[1.0, 0.9], [0.9, 1.0]]
    d = run(ChainConfig(chains=4, warmup_iters=500, sampling_iters=1000, seed=3), GaussianTarget([1.0, -1.0], cov), 2)
    r = np.corrcoef(d.flat().T)[0, 1]
    assert abs(r - 0.9) <= 0.05


def test_determinism_and_fixed_hmc():
    tgt = GaussianTarget([0.0, 0.0], np.eye(2))
    for algorithm in ("nuts", "hmc"):
        cfg = ChainConfig(chains=2, warmup_iters=100, sampling_iters=100, seed=5, algorithm=algorithm, n_leapfrog=8)
        a, b = run(cfg, tgt, 2), run(cfg, tgt, 2)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.logp, b.logp)


def test_hmc_fallback_mean():
    cfg = ChainConfig(chains=2, warmup_iters=300, sampling_iters=1500, seed=8, algorithm="hmc", n_leapfrog=10)
    d = run(cfg, GaussianTarget([2.0], [[4.0]]), 1)
    assert abs(d.flat().mean() - 2.0) < 0.2


def test_chains_differ():
    d = run(ChainConfig(chains=2, warmup_iters=50, sampling_iters=50, seed=1), GaussianTarget([0.0], [[1.0]]), 1)
    assert not np.array_equal(d.samples[0], d.samples[1])


def test_nonfinite_density():
    def bad(x):
        return -np.inf, np.zeros_like(x)

    with pytest.raises(NonFiniteDensity):
        run(ChainConfig(chains=1, warmup_iters=10, sampling_iters=10), bad, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(chains=0)
    with pytest.raises(ValueError):
        ChainConfig(target_accept=1.0)
    with pytest.raises(ValueError):
        ChainConfig(algorithm="mh")


def test_rhat_and_ess_iid(rng):
    x = rng.standard_normal((4, 1000))
    assert 0.99 <= rhat(x) <= 1.01
    assert abs(ess(x) - 4000) <= 0.2 * 4000
    y = x.copy()
    y[0] += 10
    assert rhat(y) > 1.5
    with pytest.raises(InsufficientChains):
        rhat(x[:1])


def test_rhat_identical_streams(rng):
    stream = rng.standard_normal(1000)
    x = np.stack([stream, rng.permutation(stream)])
    assert 0.99 <= rhat(x) <= 1.01


def test_ess_autocorrelated(rng):
    # AR(1) with phi = 0.9 has ESS about n (1 - phi) / (1 + phi)
    n, phi = 20000, 0.9
    e = rng.standard_normal((2, n))
    x = np.empty_like(e)
    x[:, 0] = e[:, 0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    nominal = 2 * n * (1 - phi) / (1 + phi)
    assert abs(ess(x) - nominal) < 0.25 * nominal


def test_warmup_windows():
    ends = warmup_windows(1000)
    assert ends[0] > 150 and ends[-1] == 900
    assert ends == sorted(ends)
    assert warmup_windows(0) == []


def test_dual_averaging_converges():
    da = DualAveraging(1.0, 0.8)
    for _ in range(2000):
        # acceptance decreases with the step size
        da.update(float(np.exp(-da.eps)))
    assert abs(np.exp(-da.final) - 0.8) < 0.05


def test_storage_round_trip(tmp_path):
    d = run(ChainConfig(chains=2, warmup_iters=20, sampling_iters=30, seed=2), GaussianTarget([0.0, 1.0], np.eye(2)), 2, names=["a", "b"])
    save_draws(d, tmp_path / "d.bin", extra={"k": 1})
    h = read_header(tmp_path / "d.bin")
    assert (h["dim"], h["chains"], h["iters"], h["layout"], h["version"]) == (2, 2, 30, ["a", "b"], 1)
    back = load_draws(tmp_path / "d.bin")
    for name in ("samples", "logp", "accept_stat", "n_leapfrog", "tree_depth", "divergent", "step_size", "inv_mass"):
        np.testing.assert_array_equal(getattr(back, name), getattr(d, name))
    write_draws_csv(d, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "chain,iter,lp__,a,b" and len(lines) == 61

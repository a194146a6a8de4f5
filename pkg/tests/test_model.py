import math

import numpy as np
import pytest
from scipy.linalg import block_diag
from scipy.stats import multivariate_normal, norm

from msfpca.basis import evaluate
from msfpca.covariance import factor_matrix
from msfpca.dataset import MultiBlockDataset
from msfpca.errors import DimensionMismatch
from msfpca.model import ModelSpec, MsfpcaModel, ParameterVector, gradient, log_posterior

from conftest import make_dataset

STRUCTURES = [((1,), (4,)), ((2, 1), (5, 4)), ((2, 2, 1), (6, 5, 5))]


def dense_oracle(x, ds, spec):
    """Direct evaluation of the log posterior from per-subject dense matrices."""
    layout = MsfpcaModel(ds, spec).layout
    prm = layout.unpack(x)
    L = factor_matrix(prm.cov_raw, spec.structure, spec.diag_scale, spec.diag_shift)
    Theta = block_diag(*prm.theta_raw)
    centered = spec.parameterization == "centered"
    alpha = prm.z_scores if centered else prm.z_scores @ L.T
    sig = np.exp(prm.log_sigma_eps)
    out = 0.0
    for i in range(ds.n_subjects):
        Bs, ys, ss = [], [], []
        for p, blk in enumerate(spec.blocks):
            t = ds.times[i][p]
            Bs.append(evaluate(blk.basis, t))
            ys.append(ds.values[i][p])
            ss.append(np.full(t.size, sig[p] if spec.per_block_sigma else sig[0]))
        B = block_diag(*Bs)
        y = np.concatenate(ys)
        if y.size:
            mean = B @ (prm.theta_mu + Theta @ alpha[i])
            out += norm.logpdf(y, mean, np.concatenate(ss)).sum()
        if centered:
            out += multivariate_normal.logpdf(alpha[i], np.zeros(L.shape[0]), L @ L.T)
        else:
            out += norm.logpdf(prm.z_scores[i]).sum()
    out += norm.logpdf(prm.theta_mu).sum()
    out += sum(norm.logpdf(t).sum() for t in prm.theta_raw)
    # half-Cauchy(0, 1) density of sigma plus the log Jacobian
    out += np.sum(np.log(2 / math.pi) - np.log1p(sig**2) + prm.log_sigma_eps)
    return out


def fd_gradient(model, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (model.log_density_and_gradient(x + e)[0] - model.log_density_and_gradient(x - e)[0]) / (2 * h)
    return g


def relative_error(g, ref):
    return float(np.max(np.abs(g - ref) / np.maximum(np.abs(ref), 1.0)))


@pytest.mark.parametrize("parameterization", ["centered", "noncentered"])
@pytest.mark.parametrize("per_block", [False, True])
def test_dense_oracle_toy(parameterization, per_block, rng):
    spec = ModelSpec.build((2, 1), (5, 4), parameterization=parameterization, per_block_sigma=per_block)
    ds = make_dataset([[3, 3], [3, 3]], seed=4)
    m = MsfpcaModel(ds, spec)
    for _ in range(5):
        x = rng.uniform(-2, 2, m.dim)
        ref = dense_oracle(x, ds, spec)
        lp, _ = m.log_density_and_gradient(x)
        assert lp == pytest.approx(ref, rel=1e-10)
        assert m.log_density(x) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("K,Q", STRUCTURES)
@pytest.mark.parametrize("parameterization", ["centered", "noncentered"])
def test_gradient_finite_differences(K, Q, parameterization, rng):
    spec = ModelSpec.build(K, Q, parameterization=parameterization)
    ds = make_dataset(rng.integers(0, 5, size=(5, len(K))), seed=2)
    m = MsfpcaModel(ds, spec)
    for _ in range(5):
        x = rng.uniform(-2, 2, m.dim)
        assert relative_error(m.log_density_and_gradient(x)[1], fd_gradient(m, x)) <= 1e-6


@pytest.mark.parametrize("parameterization", ["centered", "noncentered"])
@pytest.mark.parametrize("per_block", [False, True])
def test_compiled_kernel_matches_numpy(parameterization, per_block, rng):
    spec = ModelSpec.build((2, 2, 1), (6, 5, 5), parameterization=parameterization, per_block_sigma=per_block)
    ds = make_dataset(rng.integers(0, 6, size=(9, 3)), seed=5)
    m = MsfpcaModel(ds, spec)
    for _ in range(5):
        x = rng.uniform(-2, 2, m.dim)
        a, ga = m.log_density_and_gradient(x)
        b, gb = m.log_density_and_gradient_numpy(x)
        assert a == pytest.approx(b, rel=1e-11)
        np.testing.assert_allclose(ga, gb, rtol=1e-9, atol=1e-9)


def test_zero_residual_likelihood():
    spec = ModelSpec.build((1,), (4,))
    t = np.array([0.1, 0.4, 0.9])
    theta_mu = np.array([0.3, -0.2, 0.5, 1.0])
    y = evaluate(spec.blocks[0].basis, t) @ theta_mu
    ds = MultiBlockDataset(("b",), ("s",), ((t,),), ((y,),), (0.0, 1.0), rescaled=True)
    m = MsfpcaModel(ds, spec)
    x = np.zeros(m.dim)
    x[m.layout.sections["theta_mu"]] = theta_mu
    x[m.layout.sections["log_sigma"]] = math.log(0.7)
    V = 3
    assert m.log_likelihood(x) == pytest.approx(-V / 2 * math.log(2 * math.pi) - V * math.log(0.7), rel=1e-13)


@pytest.mark.parametrize("parameterization", ["centered", "noncentered"])
def test_empty_dataset_prior_only(parameterization):
    spec = ModelSpec.build((2, 1), (5, 4), parameterization=parameterization)
    ds = make_dataset(np.zeros((1, 2), dtype=int))
    m = MsfpcaModel(ds, spec)
    x = np.zeros(m.dim)
    n_mu, n_theta, K = 9, 2 * 5 + 4, 3
    hand = -0.5 * (n_mu + n_theta) * math.log(2 * math.pi) + math.log(2 / math.pi) - math.log(2)
    if parameterization == "centered":
        # alpha = 0 under N(0, e^4 I): each coordinate contributes -log(2 pi)/2 - 2
        hand += K * (-0.5 * math.log(2 * math.pi) - 2.0)
    else:
        hand += K * (-0.5 * math.log(2 * math.pi))
    assert m.log_density(x) == pytest.approx(hand, rel=1e-13)
    assert m.log_density_and_gradient(x)[0] == pytest.approx(hand, rel=1e-13)


def test_prior_gradient_zero_at_origin():
    spec = ModelSpec.build((2, 2, 1), (6, 5, 5))
    m = MsfpcaModel(make_dataset(np.zeros((3, 3), dtype=int)), spec)
    g = m.log_density_and_gradient(np.zeros(m.dim))[1]
    s = m.layout.sections
    for name in ("theta_mu", "theta_0", "theta_1", "theta_2", "z"):
        np.testing.assert_array_equal(g[s[name]], 0.0)


def test_residual_scaling_in_sigma_gradient(rng):
    # d/d log sigma of the likelihood is -n + ss / sigma^2; doubling the
    # residuals quadruples the ss part
    spec = ModelSpec.build((1,), (4,))
    ds = make_dataset([[4], [5]], seed=7)
    m = MsfpcaModel(ds, spec)
    x = np.zeros(m.dim)
    x[m.layout.sections["log_sigma"]] = 0.3
    doubled = ds.with_values([[2 * v for v in row] for row in ds.values])
    m2 = MsfpcaModel(doubled, spec)
    j = m.layout.sections["log_sigma"].start
    prior_part = -2 * math.exp(0.6) / (1 + math.exp(0.6)) + 1
    n = 9
    ss1 = fd_gradient(m, x)[j] - prior_part + n
    ss2 = fd_gradient(m2, x)[j] - prior_part + n
    assert ss2 == pytest.approx(4 * ss1, rel=1e-6)


def test_subject_reordering_invariance(rng):
    spec = ModelSpec.build((2, 1), (5, 4))
    ds = make_dataset(rng.integers(1, 5, size=(6, 2)), seed=8)
    m = MsfpcaModel(ds, spec)
    x = rng.uniform(-1, 1, m.dim)
    perm = rng.permutation(6)
    m2 = MsfpcaModel(ds.select_subjects(perm), spec)
    prm = m.layout.unpack(x)
    prm.z_scores = prm.z_scores[perm]
    x2 = m2.layout.pack(prm)
    assert m2.log_density_and_gradient(x2)[0] == pytest.approx(m.log_density_and_gradient(x)[0], rel=1e-12)


def test_finite_everywhere(rng):
    spec = ModelSpec.build((2, 1), (5, 4))
    m = MsfpcaModel(make_dataset([[3, 2], [2, 3]]), spec)
    for scale in (1, 5, 20):
        lp, g = m(rng.normal(scale=scale, size=m.dim))
        assert np.isfinite(lp) or lp == -np.inf


def test_public_functions_and_errors(rng):
    spec = ModelSpec.build((1,), (4,))
    ds = make_dataset([[3], [2]])
    m = MsfpcaModel(ds, spec)
    x = rng.normal(size=m.dim)
    prm = m.layout.unpack(x)
    assert isinstance(prm, ParameterVector)
    assert log_posterior(prm, ds, spec) == pytest.approx(m.log_density(x), rel=1e-12)
    res = gradient(prm, ds, spec)
    assert res.gradient.shape == (m.dim,)
    with pytest.raises(DimensionMismatch):
        m.log_density_and_gradient(np.zeros(m.dim + 1))
    with pytest.raises(DimensionMismatch):
        MsfpcaModel(make_dataset([[1, 1]]), spec)
    with pytest.raises(ValueError):
        ModelSpec.build((4,), (4,))
    assert len(m.layout.names()) == m.dim

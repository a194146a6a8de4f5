import math

import numpy as np
import pytest

from msfpca.association import (
    conditional_mi,
    marginal_mi,
    normalize,
    posterior_association,
    write_association_csv,
)
from msfpca.covariance import BlockStructure
from msfpca.errors import NegativeMI, SingularSubmatrix

S221 = BlockStructure((2, 2, 1))


def single_pair(r, i=0, j=2, K=5):
    R = np.eye(K)
    R[i, j] = R[j, i] = r
    return R


def partial_corr_cmi(R, structure, p1, p2):
    """Oracle via the conditional covariance of the two blocks given the rest."""
    a, b = structure.indices([p1]), structure.indices([p2])
    rest = structure.indices([q for q in range(structure.n_blocks) if q not in (p1, p2)])
    ab = np.concatenate([a, b])
    C = R[np.ix_(ab, ab)]
    if rest.size:
        C = C - R[np.ix_(ab, rest)] @ np.linalg.solve(R[np.ix_(rest, rest)], R[np.ix_(rest, ab)])
    na = a.size
    return 0.5 * (
        np.linalg.slogdet(C[:na, :na])[1] + np.linalg.slogdet(C[na:, na:])[1] - np.linalg.slogdet(C)[1]
    )


def test_zero_cross_correlation():
    assert marginal_mi(np.eye(5), S221, 0, 1) == 0.0
    assert conditional_mi(np.eye(5), S221, 0, 2) == 0.0


def test_single_correlation_values():
    mi = marginal_mi(single_pair(0.75, 2, 4), S221, 1, 2)
    assert mi == pytest.approx(-0.5 * math.log(1 - 0.75**2), abs=1e-12)
    assert mi == pytest.approx(0.41334, abs=1e-5)
    assert normalize(mi) == pytest.approx(0.75, abs=1e-12)
    assert normalize(marginal_mi(single_pair(0.5, 0, 2), S221, 0, 1)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("r", np.arange(1, 10) / 10)
def test_normalize_identity(r):
    assert normalize(-0.5 * math.log(1 - r * r)) == pytest.approx(r, abs=1e-12)


def test_normalize_bounds():
    assert normalize(0.0) == 0.0
    x = np.linspace(0, 20, 200)
    y = normalize(x)
    assert np.all(np.diff(y) > 0) or np.all(np.diff(y[:100]) > 0)
    assert np.all(y < 1.0 + 1e-15) and normalize(50.0) == pytest.approx(1.0)
    with pytest.raises(NegativeMI):
        normalize(-0.1)


def test_two_blocks_cmi_equals_mi(rng):
    s = BlockStructure((2, 1))
    R = np.eye(3)
    R[0, 2] = R[2, 0] = 0.4
    R[1, 2] = R[2, 1] = -0.3
    assert conditional_mi(R, s, 0, 1) == pytest.approx(marginal_mi(R, s, 0, 1), abs=1e-14)


def test_symmetry_and_oracle():
    R = np.eye(5)
    for (i, j), r in {(0, 2): 0.5, (2, 4): 0.75, (1, 4): 0.25, (0, 3): -0.2}.items():
        R[i, j] = R[j, i] = r
    for p1, p2 in ((0, 1), (0, 2), (1, 2)):
        assert marginal_mi(R, S221, p1, p2) == marginal_mi(R, S221, p2, p1)
        assert conditional_mi(R, S221, p1, p2) == conditional_mi(R, S221, p2, p1)
        assert conditional_mi(R, S221, p1, p2) == pytest.approx(partial_corr_cmi(R, S221, p1, p2), abs=1e-12)


def test_conditioning_induces_dependence():
    R = np.eye(5)
    R[0, 2] = R[2, 0] = 0.5
    R[2, 4] = R[4, 2] = 0.75
    assert marginal_mi(R, S221, 0, 2) == pytest.approx(0.0, abs=1e-14)
    assert conditional_mi(R, S221, 0, 2) > 0.1


def test_singular():
    R = single_pair(1.0, 0, 2)
    with pytest.raises(SingularSubmatrix):
        marginal_mi(R, S221, 0, 1)


def test_posterior_association_degenerate_and_uniform(rng):
    R = single_pair(0.6, 2, 4)
    est = posterior_association(np.repeat(R[None], 50, axis=0), S221, [(1, 2)])[0]
    assert est.median == pytest.approx(0.6) and est.lo == pytest.approx(est.hi)
    r = rng.uniform(0.7, 0.8, 20000)
    draws = np.repeat(np.eye(5)[None], r.size, axis=0)
    draws[:, 2, 4] = draws[:, 4, 2] = r
    est = posterior_association(draws, S221, [(1, 2)])[0]
    assert est.median == pytest.approx(0.75, abs=0.003)
    assert est.lo == pytest.approx(0.7025, abs=0.002)
    assert est.hi == pytest.approx(0.7975, abs=0.002)
    assert np.all((est.values >= 0) & (est.values <= 1))


def test_association_csv(tmp_path):
    est = posterior_association(np.eye(5)[None].repeat(3, axis=0), S221)
    write_association_csv(est, tmp_path / "a.csv", ["x", "y", "z"])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "pair,kind,median,lo,hi" and lines[1].startswith("x-y,marginal,")

import numpy as np
import pytest

from ctdebias.dynmodel import lorenz, van_der_pol
from ctdebias.errors import ConfigError
from ctdebias.lpdiff import FilterSpec, design_filter, design_staggered_pair
from ctdebias.oracle import dense_lsq_jet, fd_derivative_oracle, gaussian_bias_oracle


@pytest.mark.parametrize(
    "spec",
    [
        FilterSpec(N=7, p=4, m=2, h=0.1),
        FilterSpec(N=40, p=6, m=3, i0=12.5, h=0.01),
        FilterSpec(N=21, p=5, m=1, support="odd", h=0.2),
        FilterSpec(N=21, p=5, m=1, support="even", h=0.2),
    ],
)
def test_dense_fit_matches_filter(spec, rng):
    w = rng.standard_normal((spec.N, 2))
    np.testing.assert_allclose(dense_lsq_jet(w, spec), design_filter(spec).D @ w, rtol=1e-8, atol=1e-8 * np.abs(w).max() / spec.h**spec.m)


def test_dense_fit_polynomial_exact():
    spec = FilterSpec(N=9, p=3, m=2, h=0.5)
    t = (np.arange(1, 10) - spec.i0) * spec.h
    jet = dense_lsq_jet(2 - t + 3 * t**2, spec)
    np.testing.assert_allclose(jet[:, 0], [2, -1, 6], atol=1e-12)


def test_dense_fit_limits():
    with pytest.raises(ConfigError):
        dense_lsq_jet(np.zeros(300), FilterSpec(N=300, p=3, m=1))
    with pytest.raises(ConfigError):
        dense_lsq_jet(np.zeros(5), FilterSpec(N=6, p=3, m=1))


def test_gaussian_oracle_square():
    mean, se = gaussian_bias_oracle(lambda x: x[:, 0] ** 2, [0.7], [[0.2]], draws=400_000, seed=1)
    assert abs(mean - 0.2) <= 3 * se


def test_gaussian_oracle_quartic_gap():
    v = 0.3
    mean, se = gaussian_bias_oracle(lambda x: x[:, 0] ** 4, [1.0], [[v]], draws=1_000_000, seed=2)
    assert abs(mean - (6 * v + 3 * v**2)) <= 3 * se
    # the second-order operator misses exactly the 3 v^2 term
    assert abs(mean - 6 * v) > 3 * se


def test_gaussian_oracle_zero_cov():
    mean, se = gaussian_bias_oracle(lambda x: np.sin(x).sum(axis=1), [0.1, 0.2], np.zeros((2, 2)), draws=1000)
    assert mean == 0.0 and se == 0.0


def test_fd_oracle_vdp_point():
    g, H = fd_derivative_oracle(van_der_pol(), np.array([[2.0], [1.0]]))
    np.testing.assert_allclose(g[0, :2], [-4.0, -3.0], atol=1e-8)
    np.testing.assert_allclose(H[0, :2, :2], [[-2.0, -4.0], [-4.0, 0.0]], atol=1e-4)


def test_fd_oracle_linear_feature_zero_hessian(rng):
    g, H = fd_derivative_oracle(lorenz(), rng.standard_normal((2, 3)))
    np.testing.assert_allclose(g[:3, :3], np.eye(3), atol=1e-8)
    assert np.abs(H[:3]).max() < 1e-4


def test_staggered_pair_against_dense_fit(rng):
    spec = FilterSpec(N=30, p=5, m=2, h=0.05)
    odd, even = design_staggered_pair(spec)
    w = rng.standard_normal(30)
    np.testing.assert_allclose(odd.D @ w, dense_lsq_jet(w, odd.spec)[:, 0], rtol=1e-8, atol=1e-6)
    np.testing.assert_allclose(even.D @ w, dense_lsq_jet(w, even.spec)[:, 0], rtol=1e-8, atol=1e-6)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from cvasym.series_estimator import (EmpiricalCoefficients, coeff_means, empirical_coeffs,
                                     empirical_contrast, exact_excess_risk, psi_matrix, risk_curve)
from cvasym.spectral_density import SQRT2, DensityModel, Sample, cov_psi, density_eval, make_family, sample


def test_points_at_zero():
    s = Sample(np.zeros(7))
    th = empirical_coeffs(s, range(7), 5).theta_hat
    assert th[0] == 1.0
    assert np.allclose(th[1:], SQRT2, rtol=0, atol=1e-15)


def test_points_at_quarter():
    th = empirical_coeffs(Sample(np.full(4, 0.25)), range(4), 2).theta_hat
    assert th[1] == pytest.approx(0.0, abs=1e-15)
    assert th[2] == pytest.approx(-SQRT2, rel=1e-15)


def test_single_point():
    th = empirical_coeffs(Sample(np.array([0.1])), [0], 1).theta_hat
    assert th[1] == pytest.approx(SQRT2 * math.cos(0.2 * math.pi), rel=1e-15)
    assert th[1] == pytest.approx(1.14412, abs=1e-5)


def test_subset_and_empty():
    s = Sample(np.array([0.0, 0.25, 0.5]))
    th = empirical_coeffs(s, [1, 2], 1).theta_hat
    assert th[1] == pytest.approx((0.0 - SQRT2) / 2, abs=1e-15)
    with pytest.raises(ValueError):
        empirical_coeffs(s, [], 3)
    with pytest.raises(ValueError):
        EmpiricalCoefficients(np.array([0.9, 0.1]), 3)


def test_excess_risk_examples():
    u = make_family("uniform")
    assert exact_excess_risk(np.array([1.0, 0, 0, 0]), u, 3) == 0.0
    th = np.array([1.0, 0.3, -0.2, 0.5])
    assert exact_excess_risk(th, u, 3) == pytest.approx(0.09 + 0.04 + 0.25, rel=1e-15)
    g = make_family("geometric", r="1/3")
    th = g.theta(np.arange(3))
    assert exact_excess_risk(th, g, 2) == pytest.approx(1 / 648, rel=1e-13)


def test_excess_risk_matches_quadrature(rng):
    seq = make_family("geometric", r=0.5)
    x = sample(DensityModel.from_seq(seq), 50, rng).values
    th = coeff_means(x, 10)
    for k in (0, 3, 10):
        est = lambda t: float(psi_matrix(np.array([t]), k)[0] @ th[:k + 1])
        q, _ = integrate.quad(lambda t: (est(t) - density_eval(seq, t)) ** 2, 0, 1,
                              epsabs=1e-12, limit=500)
        assert exact_excess_risk(th, seq, k) == pytest.approx(q, abs=1e-8)


def test_risk_curve_matches_pointwise(rng):
    seq = make_family("polynomial", beta=1.5, kappa=0.5)
    th = np.concatenate([[1.0], rng.normal(size=15) * 0.1])
    rc = risk_curve(th, seq)
    for k in range(16):
        assert rc[k] == pytest.approx(exact_excess_risk(th, seq, k), rel=1e-13)


def test_contrast_examples(rng):
    s = Sample(rng.random(30))
    th = np.concatenate([[1.0], rng.normal(size=5)])
    assert empirical_contrast(s, range(30), th, 0) == pytest.approx(-1.0, abs=1e-15)
    assert empirical_contrast(s, range(30), np.zeros(6), 5) == 0.0
    with pytest.raises(ValueError):
        empirical_contrast(s, [], th, 2)


def test_contrast_direct_summation(rng):
    x = rng.random(40)
    S = np.arange(5, 40, 2)
    th = np.concatenate([[1.0], rng.normal(size=6)])
    k = 6
    direct = 0.0
    for i in S:
        direct += th[0] + sum(th[j] * SQRT2 * math.cos(2 * math.pi * j * x[i]) for j in range(1, k + 1))
    ref = math.fsum(t * t for t in th[:k + 1]) - 2 * direct / S.size
    assert empirical_contrast(Sample(x), S, th, k) == pytest.approx(ref, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 12))
def test_psi_matrix_orthonormal_scaling(xs, k):
    P = psi_matrix(np.array(xs), k)
    assert np.all(P[:, 0] == 1.0)
    assert np.all(np.abs(P[:, 1:]) <= SQRT2 + 1e-15)


def test_coefficients_unbiased_and_second_moment(rng):
    seq = make_family("geometric", r=0.6)
    model = DensityModel.from_seq(seq)
    M, n_t, K = 10_000, 200, 10
    x = sample(model, M * n_t, rng).values.reshape(M, n_t)
    th = np.stack([coeff_means(row, K) for row in x])
    js = np.arange(1, K + 1)
    var = np.array([cov_psi(seq, j, j) for j in js])
    mean_err = th[:, 1:].mean(axis=0) - seq.theta(js)
    assert np.all(np.abs(mean_err) <= 4 * np.sqrt(var / (n_t * M)))
    sq = (th[:, 1:] - seq.theta(js)) ** 2
    assert np.all(np.abs(sq.mean(axis=0) - var / n_t) <= 4 * sq.std(axis=0, ddof=1) / math.sqrt(M))

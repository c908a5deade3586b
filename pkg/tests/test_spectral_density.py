import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from cvasym.spectral_density import (SQRT2, CoefficientSequence, DensityModel, HypothesisConstants,
                                     ParameterError, SamplingError, TailRule, check_hypotheses,
                                     cov_psi, cov_psi_matrix, density_eval, make_family, nt_window,
                                     parse_family, sample, theta_toeplitz)

FAMILIES = [
    make_family("uniform"),
    make_family("geometric", r="1/3"),
    make_family("geometric", r=0.8),
    make_family("polynomial", beta=1.5, kappa=0.5),
    make_family("polynomial", beta=3.0, kappa=0.5),
    make_family("plateau", h="1/900", u=30),
]


# -- coefficients -------------------------------------------------------------

def test_geometric_third_coefficient():
    assert make_family("geometric", r="1/3").theta(2) == pytest.approx(1 / 9, rel=1e-15)


def test_uniform_has_no_oscillation():
    s = make_family("uniform")
    assert np.all(s.theta(np.arange(1, 50)) == 0)


def test_plateau_edges():
    s = make_family("plateau", h="1/900", u=30)
    assert s.theta(30) == pytest.approx(1 / 30, rel=1e-15)
    assert s.theta(31) == 0.0


def test_bad_parameters():
    with pytest.raises(ParameterError):
        make_family("geometric", r=1.2)
    with pytest.raises(ParameterError):
        make_family("polynomial", beta=0.9)
    with pytest.raises(ParameterError):
        CoefficientSequence(np.array([0.5, 0.1]))
    with pytest.raises(ParameterError):
        make_family("nope")


def test_parse_family_forms():
    a = parse_family("polynomial:beta=1.5,kappa=0.5")
    b = parse_family({"kind": "polynomial", "beta": 1.5, "kappa": 0.5})
    assert a.theta(7) == b.theta(7) == pytest.approx(0.5 * 7 ** -1.5)
    assert parse_family("plateau:h=1/900,u=30").J == 30


@pytest.mark.parametrize("seq", FAMILIES, ids=lambda s: s.label)
def test_parseval_closed_form(seq):
    # brute summation of theta_j^2 with a generous cut-off plus an integral tail estimate
    J = 200_000
    head = math.fsum(seq.theta_sq(np.arange(J + 1)))
    if seq.tail.kind == "polynomial":
        b = 2 * seq.tail.beta
        head += seq.tail.kappa ** 2 * (J + 0.5) ** (1 - b) / (b - 1)
    assert head == pytest.approx(seq.l2_norm_sq, rel=1e-12)


def test_norm_of_sampling_polynomial():
    assert make_family("polynomial", beta=1.5, kappa=0.5).l2_norm_sq == pytest.approx(1.3005142257898985,
                                                                                     rel=1e-13)


@pytest.mark.parametrize("seq", FAMILIES[:4], ids=lambda s: s.label)
def test_quadrature_recovers_coefficients(seq):
    for j in range(1, 21):
        val, _ = integrate.quad(lambda x: density_eval(seq, x) * SQRT2 * math.cos(2 * math.pi * j * x),
                                0, 1, epsabs=1e-11, limit=400)
        assert val == pytest.approx(seq.theta(j), abs=1e-8)


# -- evaluation ---------------------------------------------------------------

def test_density_eval_examples():
    assert density_eval(make_family("uniform"), 0.3) == 1.0
    g = make_family("geometric", r="1/3")
    assert density_eval(g, 0.0) == pytest.approx(1 + SQRT2 / 2, abs=1e-14)
    assert density_eval(g, 0.5) == pytest.approx(1 - SQRT2 / 4, abs=1e-14)


def test_density_eval_rejects_outside():
    with pytest.raises(ValueError):
        density_eval(make_family("uniform"), 1.5)


def test_polynomial_eval_matches_long_direct_sum():
    s = make_family("polynomial", beta=1.5, kappa=0.5)
    x = np.array([0.013, 0.21, 0.5, 0.77])
    js = np.arange(1, 2_000_001)
    ref = []
    for xi in x:
        terms = 0.5 * js ** -1.5 * np.cos(2 * np.pi * js * xi)
        # remainder of the alternating-ish sum is O(J^-1.5 / sin(pi x)) ~ 1e-9 here
        ref.append(1 + SQRT2 * math.fsum(terms))
    assert density_eval(s, x) == pytest.approx(np.array(ref), abs=1e-7)


# -- sampling -------------------------------------------------------------------

def test_uniform_sampling_examples(rng):
    m = DensityModel.from_seq(make_family("uniform"))
    assert len(sample(m, 5, rng)) == 5
    assert len(sample(m, 0, rng)) == 0
    x = sample(m, 100_000, rng).values
    assert abs(np.mean(SQRT2 * np.cos(2 * np.pi * x))) <= 3 / math.sqrt(x.size)


def test_geometric_sample_mean(rng):
    seq = make_family("geometric", r="1/3")
    x = sample(DensityModel.from_seq(seq), 100_000, rng).values
    psi1 = SQRT2 * np.cos(2 * np.pi * x)
    sd = math.sqrt(cov_psi(seq, 1, 1) / x.size)
    assert abs(psi1.mean() - 1 / 3) <= 3 * sd


def test_uncertified_density_is_refused(rng):
    m = DensityModel.from_seq(make_family("polynomial", beta=1.5))   # kappa = 1 dips below 0
    assert not m.nonneg_certified
    assert m.min_lower < 0
    with pytest.raises(SamplingError):
        sample(m, 10, rng)


def test_certified_sampling_polynomial():
    m = DensityModel.from_seq(make_family("polynomial", beta=1.5, kappa=0.5))
    assert m.nonneg_certified
    assert 0.40 < m.min_lower < 0.43
    assert 2.85 < m.sup_norm < 2.9


def test_low_acceptance_rate_is_an_error(rng):
    # 1/2 + Fejer kernel / 2: non-negative, envelope about 1 + J/2
    J = 4000
    js = np.arange(1, J + 1)
    seq = CoefficientSequence(np.concatenate([[1.0], (1 - js / (J + 1)) / SQRT2]))
    m = dataclasses.replace(DensityModel.from_seq(seq, grid=16), nonneg_certified=True)
    assert m.envelope > 1000
    with pytest.raises(SamplingError, match="acceptance rate"):
        sample(m, 10, rng)


def test_sample_matches_cdf(rng):
    from scipy import stats
    seq = make_family("geometric", r=0.5)
    x = sample(DensityModel.from_seq(seq), 20_000, rng).values

    def cdf(t):
        js = np.arange(1, 80)
        return t + SQRT2 * np.sum(0.5 ** js * np.sin(2 * np.pi * np.outer(t, js)) / (2 * np.pi * js), axis=1)
    assert stats.kstest(x, cdf).pvalue > 1e-3


# -- covariances ----------------------------------------------------------------

def test_cov_psi_uniform():
    u = make_family("uniform")
    assert cov_psi(u, 1, 2) == 0
    assert cov_psi(u, 1, 1) == 1


def test_cov_psi_geometric_exact():
    g = make_family("geometric", r="1/3")
    t = lambda j: Fraction(1, 3 ** j)
    off = float(t(3) + t(1)) / SQRT2 - float(t(1) * t(2))
    diag = 1 + float(t(2)) / SQRT2 - float(t(1) ** 2)
    assert cov_psi(g, 1, 2) == pytest.approx(off, rel=1e-14)
    assert cov_psi(g, 1, 1) == pytest.approx(diag, rel=1e-14)
    assert off == pytest.approx(0.224854, abs=1e-6)
    assert diag == pytest.approx(0.967456, abs=1e-6)


@given(st.integers(1, 60), st.integers(1, 60))
def test_cov_psi_symmetric(i, j):
    s = make_family("polynomial", beta=2.0, kappa=0.3)
    assert cov_psi(s, i, j) == cov_psi(s, j, i)


def test_cov_psi_against_monte_carlo(rng):
    seq = make_family("geometric", r=0.5)
    x = sample(DensityModel.from_seq(seq), 1_000_000, rng).values
    idx = np.arange(1, 11)
    P = SQRT2 * np.cos(2 * np.pi * np.outer(x, idx))
    P -= P.mean(axis=0)
    emp = P.T @ P / (x.size - 1)
    exact = cov_psi_matrix(seq, idx)
    # sd of an empirical covariance: sqrt(Var(ab)/m), bounded here by sqrt(E a^2 b^2 / m) <= 4/sqrt(m)
    prod_sd = np.sqrt(np.mean((P[:, :, None] * P[:, None, :]) ** 2, axis=0) / x.size)
    assert np.all(np.abs(emp - exact) <= 4 * prod_sd)


@pytest.mark.parametrize("seq", FAMILIES, ids=lambda s: s.label)
def test_theta_toeplitz_psd_and_bounded(seq, rng):
    sup = DensityModel.from_seq(seq).sup_norm
    for _ in range(10):
        a = int(rng.integers(0, 200))
        idx = np.arange(a, a + int(rng.integers(1, 120)))
        w = np.linalg.eigvalsh(theta_toeplitz(seq, idx))
        assert w[0] >= -1e-10
        assert w[-1] <= sup + 1e-8


# -- hypotheses and the validation window ------------------------------------------------

def test_uniform_fails_hyp2_first():
    rep = check_hypotheses(make_family("uniform"), HypothesisConstants(), k_check_max=10)
    assert not rep["hyp2"].holds_on_checked_range
    assert rep["hyp2"].first_violation == 1


def test_geometric_fails_hyp2_eventually():
    g = make_family("geometric", r="1/3")
    rep = check_hypotheses(g, HypothesisConstants(c2=0.1, delta2=1.0), k_check_max=100)
    bad = rep["hyp2"].first_violation
    assert bad is not None
    # brute-force first k where sum_{j>k} 9^-j < 0.1 / k
    ks = np.arange(1, 101)
    tail = 9.0 ** -ks / 8.0
    assert bad == int(ks[np.argmax(tail < 0.1 / ks)])


def test_polynomial_hyp1():
    p = make_family("polynomial", beta=1.5, kappa=1.0)
    rep = check_hypotheses(p, HypothesisConstants(c1=1.0, delta1=0.0), k_check_max=500)
    assert rep["hyp1"].holds_on_checked_range


def test_hypotheses_4_5_arithmetic():
    rep = check_hypotheses(make_family("geometric", r=0.5), n=10_000, n_t=10_000 - 1000)
    assert rep["hyp4"].holds_on_checked_range and rep["hyp5"].holds_on_checked_range
    rep = check_hypotheses(make_family("geometric", r=0.5), n=10_000, n_t=10_000 - 100)
    assert not rep["hyp5"].holds_on_checked_range


def test_nt_window_examples():
    w = nt_window(10_000, 0.2, 0.05)
    assert (w.lo, w.hi) == (736, 1584)
    assert nt_window(10, 0.5, 0.3).empty
    w = nt_window(10 ** 6, 1e-9, 1e-9)
    assert not w.empty and 9_999 <= w.lo <= 10_001 and w.hi >= 999_000


@given(st.integers(2, 10 ** 7), st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_nt_window_bounds(n, d4, d5):
    w = nt_window(n, d4, d5)
    if not w.empty:
        assert w.lo >= n ** (2 / 3 + d5) - 1e-6
        assert w.hi <= n ** (1 - d4) + 1e-6


def test_tail_rule_validation():
    with pytest.raises(ParameterError):
        TailRule("weird")

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvasym.mc_harness import _rng, derive_seed, draw_admissible
from cvasym.oracle_scaling import (f_n_values, k_star, oracle_risk, provable_shape_checks, risk_shape,
                                   scaling, shape_checks, window, window_mass)
from cvasym.spectral_density import CoefficientSequence, make_family

PLATEAU = make_family("plateau", h="1/900", u=30)


def brute_deltas(seq, n, n_t, l_max=4000):
    """Direct transcription of the two definitions, scanning l up to l_max."""
    ks = max(j for j in range(0, l_max) if seq.theta(j) ** 2 >= 1 / n_t * (1 - 1e-12))
    rho = math.sqrt(n_t / (n - n_t))
    dd = [l for l in range(1, l_max) if seq.theta(ks + l) ** 2 >= (1 - rho / math.sqrt(l)) / n_t * (1 - 1e-12)]
    dg = [l for l in range(1, ks + 1) if seq.theta(ks - l) ** 2 >= (1 + rho / math.sqrt(l)) / n_t * (1 - 1e-12)]
    return max(dd, default=0), min(dg, default=0)


def test_k_star_examples():
    assert k_star(make_family("geometric", r="1/3"), 100) == 2
    assert k_star(make_family("uniform"), 12345) == 0
    assert k_star(PLATEAU, 900) == 30


def test_oracle_risk_examples():
    g = make_family("geometric", r="1/3")
    val, arg = oracle_risk(g, 100, return_argmin=True)
    assert arg == 2
    assert val == pytest.approx(1 / 648 + 2 / 100, rel=1e-13)
    scan = min(g.tail_sq(k) + k / 100 for k in range(51))
    assert val == pytest.approx(scan, rel=1e-15)
    assert oracle_risk(make_family("uniform"), 10) == 0.0
    assert oracle_risk(PLATEAU, 900) == pytest.approx(1 / 30, rel=1e-13)


def test_plateau_worked_example():
    sc = scaling(PLATEAU, 1000, 900)
    assert (sc.k_star, sc.delta_d, sc.delta_g, sc.delta) == (30, 9, 30, 30)
    assert sc.E_script == pytest.approx(1 / 30, rel=1e-14)
    assert sc.e_frak == pytest.approx(3000 ** -0.5, rel=1e-14)


def test_geometric_delta_near_ratio():
    sc = scaling(make_family("geometric", r="1/3"), 10_000, 9900)
    assert abs(sc.delta - 99) <= 1


@pytest.mark.parametrize("seq,n,n_t", [
    (make_family("geometric", r="1/3"), 10_000, 9900),
    (make_family("geometric", r=0.9), 5000, 4500),
    (make_family("polynomial", beta=1.5, kappa=0.5), 5000, 4321),
    (make_family("polynomial", beta=2.5, kappa=0.8), 800, 700),
    (PLATEAU, 1000, 900),
    (make_family("plateau", h=0.002, u=12), 3000, 2000),
])
def test_deltas_match_brute_force(seq, n, n_t):
    sc = scaling(seq, n, n_t)
    assert (sc.delta_d, sc.delta_g) == brute_deltas(seq, n, n_t)


def test_delta_d_positive_when_nt_exceeds_nv():
    for seq in (make_family("geometric", r=0.4), make_family("uniform"), PLATEAU):
        assert scaling(seq, 100, 60).delta_d >= 1


def test_scaling_rejects_bad_sizes():
    with pytest.raises(ValueError):
        scaling(PLATEAU, 100, 100)


def test_f_n_plateau():
    sc = scaling(PLATEAU, 1000, 900)
    f = risk_shape(PLATEAU, sc, x_max=3.0)
    assert f.at(0) == 0.0
    a = np.linspace(0.05, 1, 7)
    assert f(a) == pytest.approx(a * math.sqrt(100 / 30), rel=1e-12)
    assert f(1.0) == pytest.approx(1.8257418583505538, rel=1e-13)
    assert np.allclose(f(np.linspace(-1, 0, 9)), 0.0, atol=1e-12)
    with pytest.raises(IndexError):
        f_n_values(PLATEAU, sc, [-31])


def test_window_plateau():
    sc = scaling(PLATEAU, 1000, 900)
    w = window(risk_shape(PLATEAU, sc, x_max=3.0), 1.0)
    assert w.j_a == -30 and w.j_b == 16
    assert w.a == -1.0 and w.b == pytest.approx(16 / 30)


def test_window_mass_exclusive_lower_end():
    sc = scaling(PLATEAU, 1000, 900)
    w = window(risk_shape(PLATEAU, sc, x_max=3.0), 1.0)
    # indices 1..30 carry 1/900 each, 31.. carry 0
    assert window_mass(PLATEAU, sc, w) == pytest.approx(30 / 900, rel=1e-14)


def test_f_n_direct_sum():
    seq = make_family("polynomial", beta=1.5, kappa=0.5)
    sc = scaling(seq, 5000, 4321)
    for j in (-sc.k_star, -3, 0, 1, 17, 60):
        lo, hi = sorted((sc.k_star, sc.k_star + j))
        ref = math.fsum(abs(seq.theta(i) ** 2 - 1 / sc.n_t) for i in range(lo + 1, hi + 1)) / sc.e_frak
        assert f_n_values(seq, sc, [j])[0] == pytest.approx(ref, rel=1e-12, abs=1e-14)


def _admissible(i):
    seq, n, n_t, _ = draw_admissible(_rng(derive_seed(99, i)))
    return seq, scaling(seq, n, n_t)


@pytest.mark.parametrize("i", range(40))
def test_window_bounds_random(i):
    seq, sc = _admissible(i)
    f = risk_shape(seq, sc, x_max=3.0)
    for x in (0.5, 1.0, 3.0):
        w = window(f, x)
        assert w.a <= 0 <= w.b
        assert w.b - w.a <= 2 * (1 + x) + 1e-12
        assert window_mass(seq, sc, w) <= 4 * (1 + x) * sc.E_script * (1 + 1e-12)


@pytest.mark.parametrize("i", range(40))
def test_provable_forms_random(i):
    """Delta >= floor(n_t/n_v) and f_n increments >= sqrt(Delta/(Delta+1)) times the distance."""
    seq, sc = _admissible(i)
    f = risk_shape(seq, sc, x_max=3.0)
    assert all(provable_shape_checks(sc, f).values())
    assert sc.delta_d >= sc.n_t // sc.n_v


@pytest.mark.parametrize("i", range(40))
def test_integer_ratio_odgs(i):
    """With n_t a multiple of n_v the five inequalities hold."""
    seq, sc0 = _admissible(i)
    n_v = sc0.n_v
    n_t = n_v * max(1, sc0.n_t // n_v)
    sc = scaling(seq, n_t + n_v, n_t)
    chk = sc.lemma_checks()
    if sc.monotone:
        assert all(chk.values()), chk


def test_left_slope_relaxed_form():
    # Delta = Delta_g: a plateau whose left neighbours sit well above 1/n_t
    seq = CoefficientSequence(np.concatenate([[1.0], np.full(20, 0.2), np.full(40, 1 / 30)]))
    sc = scaling(seq, 1000, 900)
    assert sc.delta == sc.delta_g > 1
    f = risk_shape(seq, sc, x_max=3.0)
    chk = provable_shape_checks(sc, f)
    assert chk["fn_slope_left_relaxed"]
    assert "fn_slope_ge_minus_one_left" in shape_checks(seq, sc, f)


def test_literal_increment_bound_can_fail():
    """The unit-slope increment statement is too strong by the factor sqrt(Delta/(Delta+1))."""
    fails = 0
    for i in range(40):
        seq, sc = _admissible(i)
        f = risk_shape(seq, sc, x_max=3.0)
        fails += not shape_checks(seq, sc, f)["fn_increment_ge_dist"]
    assert fails > 0


@given(st.floats(0.2, 0.9), st.integers(50, 5000), st.floats(0.5, 0.95))
def test_scaling_relations(r, n, frac):
    n_t = min(n - 1, max(1, int(frac * n)))
    sc = scaling(make_family("geometric", r=r), n, n_t)
    assert sc.delta == max(sc.delta_d, sc.delta_g)
    assert sc.E_script == pytest.approx(sc.delta / n_t)
    assert sc.e_frak == pytest.approx(math.sqrt(sc.E_script / (n - n_t)))

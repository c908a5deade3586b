"""Oracle index, oracle risk, the scaling triple and the deterministic risk shape f_n."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import GridFunction
from .spectral_density import REL_TOL, CoefficientSequence, geq


def k_star(seq: CoefficientSequence, n: int) -> int:
    """Largest k with theta_k^2 >= 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return max(0, seq.last_index_at_least(1.0 / n))


def oracle_risk(seq: CoefficientSequence, n: int, return_argmin: bool = False):
    """inf_k tail(k) + k/n.  Scans blocks of k until k/n alone beats the best value."""
    best, arg = math.inf, 0
    start, block = 0, 256
    while start / n < best:
        ks = np.arange(start, start + block)
        vals = seq.tail_sq(ks) + ks / n
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, arg = float(vals[i]), int(ks[i])
        start += block
        block *= 2
    return (best, arg) if return_argmin else best


def _delta_d(seq: CoefficientSequence, ks: int, n_t: int, rho: float) -> int:
    """Largest l >= 1 with theta_{k*+l}^2 >= (1 - rho/sqrt l)/n_t, 0 if none.

    Beyond the stored coefficients theta^2 decreases while the threshold
    increases with l, so the first failure there (with a positive bracket)
    ends the search.
    """
    best, l0 = 0, 1
    stored_end = max(seq.J - ks, 0)
    auto_end = int(math.floor(rho * rho * (1 + REL_TOL)))
    block = 256
    while True:
        ls = np.arange(l0, l0 + block)
        thr = (1.0 - rho / np.sqrt(ls)) / n_t
        ok = (thr <= 0) | geq(seq.theta_sq(ks + ls), thr)
        stop = ~ok & (ls > stored_end) & (ls > auto_end)
        if stop.any():
            q = ls[ok & (ls < ls[np.argmax(stop)])]
            return int(q.max()) if q.size else best
        if ok.any():
            best = int(ls[ok][-1])
        l0 += block
        block *= 2


def _delta_g(seq: CoefficientSequence, ks: int, n_t: int, rho: float) -> int:
    if ks == 0:
        return 0
    ls = np.arange(1, ks + 1)
    thr = (1.0 + rho / np.sqrt(ls)) / n_t
    ok = np.nonzero(geq(seq.theta_sq(ks - ls), thr))[0]
    return int(ls[ok[0]]) if ok.size else 0


@dataclass(frozen=True)
class ScalingSummary:
    k_star: int
    oracle_risk: float      # or(n_t)
    delta_d: int
    delta_g: int
    delta: int
    E_script: float
    e_frak: float
    n: int
    n_t: int
    n_v: int
    monotone: bool
    degenerate: bool

    def lemma_checks(self) -> dict:
        """The five inequalities relating Delta, E, e and or(n_t), as booleans."""
        n_t, n_v = self.n_t, self.n_v
        D, E, e = self.delta, self.E_script, self.e_frak
        tol = 1e-12
        return {
            "odgs_delta_ge_nt_over_nv": D * n_v >= n_t,
            "odgs_E_ge_inv_nv": E * n_v >= 1 - tol,
            "odgs_e_ge_inv_nv": e * n_v >= 1 - tol,
            "odgs_e_le_E": e <= E * (1 + tol),
            "odgs_E_le_2or": E <= (2 * self.oracle_risk + 1.0 / n_v) * (1 + tol),
        }

    def as_record(self) -> dict:
        return {"k_star": self.k_star, "delta_d": self.delta_d, "delta_g": self.delta_g,
                "delta": self.delta, "E_script": self.E_script, "e_frak": self.e_frak}


def scaling(seq: CoefficientSequence, n: int, n_t: int) -> ScalingSummary:
    if not 1 <= n_t <= n - 1:
        raise ValueError("need 1 <= n_t <= n - 1")
    n_v = n - n_t
    ks = k_star(seq, n_t)
    rho = math.sqrt(n_t / n_v)
    dd = _delta_d(seq, ks, n_t, rho)
    dg = _delta_g(seq, ks, n_t, rho)
    D = max(dd, dg)
    E = D / n_t
    return ScalingSummary(k_star=ks, oracle_risk=oracle_risk(seq, n_t), delta_d=dd, delta_g=dg,
                          delta=D, E_script=E, e_frak=math.sqrt(E / n_v), n=n, n_t=n_t,
                          n_v=n_v, monotone=seq.monotone_sq, degenerate=D == 0)


# ---------------------------------------------------------------------------
# f_n and its sublevel windows
# ---------------------------------------------------------------------------

def f_n_values(seq: CoefficientSequence, sc: ScalingSummary, j) -> np.ndarray:
    """e * f_n(j/Delta) = sum over (min(k,k*), max(k,k*)] of |theta^2 - 1/n_t|, divided by e."""
    if sc.degenerate:
        raise ValueError("degenerate scaling (Delta = 0): f_n undefined")
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    if np.any(j < -sc.k_star):
        raise IndexError("j must be >= -k*")
    lo, hi = int(min(j.min(), 0)), int(max(j.max(), 0))
    idx = np.arange(sc.k_star + lo + 1, sc.k_star + hi + 1)
    terms = np.abs(seq.theta_sq(idx) - 1.0 / sc.n_t)
    # cumulative sums anchored at k*
    c = np.concatenate([[0.0], np.cumsum(terms)])
    zero = -lo   # position in c corresponding to k*
    out = np.abs(c[zero + j] - c[zero])
    return out / sc.e_frak


def risk_shape(seq: CoefficientSequence, sc: ScalingSummary, x_max: float = 3.0,
               j_max: Optional[int] = None) -> GridFunction:
    """f_n on knots -k*..j_max; default j_max is the first knot above x_max plus 2 Delta."""
    if j_max is None:
        j = 0
        step = max(sc.delta, 8)
        while True:
            js = np.arange(j, j + step)
            v = f_n_values(seq, sc, js)
            above = np.nonzero(v > x_max)[0]
            if above.size:
                j_max = int(js[above[0]]) + 2 * sc.delta
                break
            j += step
            step *= 2
    js = np.arange(-sc.k_star, j_max + 1)
    return GridFunction(js, f_n_values(seq, sc, js), sc.delta, "f_n")


@dataclass(frozen=True)
class Window:
    x: float
    j_a: int
    j_b: int
    delta: int

    @property
    def a(self) -> float:
        return self.j_a / self.delta

    @property
    def b(self) -> float:
        return self.j_b / self.delta


def window(f: GridFunction, x: float) -> Window:
    """Extreme knots of the sublevel set {f_n <= x} on each side of 0."""
    if not x > 0:
        raise ValueError("x must be positive")
    left = f.j <= 0
    ok = f.values <= x
    ja = int(f.j[left & ok].min())
    right = (f.j >= 0) & ok
    jb = int(f.j[right].max())
    if jb == f.j_hi:
        raise ValueError("grid too short: f_n <= x at the last knot")
    return Window(x, ja, jb, f.delta)


def window_mass(seq: CoefficientSequence, sc: ScalingSummary, w: Window) -> float:
    """sum of theta_j^2 over k* + a_x Delta < j <= k* + b_x Delta."""
    idx = np.arange(sc.k_star + w.j_a + 1, sc.k_star + w.j_b + 1)
    return float(seq.theta_sq(idx).sum())


def shape_checks(seq: CoefficientSequence, sc: ScalingSummary, f: GridFunction) -> dict:
    """Increment bounds on f_n (tolerance 1e-9 on every comparison)."""
    tol = 1e-9
    a = f.alpha
    v = f.values
    s = f.slopes()
    D = sc.delta
    out = {}
    # f(t) - f(s) >= t - s for all 1 <= s <= t is the same as f(alpha) - alpha
    # being non-decreasing on knots alpha >= 1 (and mirrored on the left)
    r = a >= 1
    ok_r = np.all(np.diff(v[r] - a[r]) >= -tol * (1 + np.abs(v[r][1:])))
    l = a <= -1
    ok_l = np.all(np.diff(v[l] + a[l]) <= tol * (1 + np.abs(v[l][:-1])))
    out["fn_increment_ge_dist"] = bool(ok_r and ok_l)
    out["fn_ge_abs_minus_one"] = bool(np.all(v >= np.maximum(np.abs(a) - 1, 0) - tol))
    seg_lo = f.j[:-1]
    if sc.delta == sc.delta_d:
        m = (seg_lo >= 0) & (seg_lo < D)
        out["fn_slope_le_one_right"] = bool(np.all(s[m] <= 1 + tol))
    if sc.delta == sc.delta_g:
        m = (seg_lo >= -D) & (seg_lo < 0)
        out["fn_slope_ge_minus_one_left"] = bool(np.all(s[m] >= -1 - tol))
    return out


def provable_shape_checks(sc: ScalingSummary, f: GridFunction) -> dict:
    """The bounds that follow from the definitions of Delta_d, Delta_g as stated.

    Failing the Delta_d test at l = Delta + 1 only gives a block average of
    theta^2 below 1/n_t - 1/sqrt((Delta+1) n_t n_v), so the right increment
    slope is at least sqrt(Delta/(Delta+1)) rather than 1; on the left the
    slope bound becomes -sqrt(Delta/(Delta-1)).  Delta itself is only
    guaranteed to reach floor(n_t/n_v).
    """
    tol = 1e-9
    a, v, s = f.alpha, f.values, f.slopes()
    D = sc.delta
    out = {"delta_ge_floor_rho2": D >= sc.n_t // sc.n_v}
    c = math.sqrt(D / (D + 1.0))
    r, l = a >= 1, a <= -1
    ok_r = np.all(np.diff(v[r] - c * a[r]) >= -tol * (1 + np.abs(v[r][1:])))
    ok_l = np.all(np.diff(v[l] + c * a[l]) <= tol * (1 + np.abs(v[l][:-1])))
    out["fn_increment_ge_scaled_dist"] = bool(ok_r and ok_l)
    if D == sc.delta_g and D > 1:
        m = (f.j[:-1] >= -D) & (f.j[:-1] < 0)
        out["fn_slope_left_relaxed"] = bool(np.all(s[m] >= -math.sqrt(D / (D - 1.0)) - tol))
    return out

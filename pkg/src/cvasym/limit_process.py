"""The time change g_n, the kernel K(g), time-changed Brownian paths, the exact
conditional covariance of the fluctuation process Z, and three numerical tools
used around them: monotone correction, Gaussian coupling and the Brownian
bridge integral."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import isotonic_regression

from .grid import GridFunction
from .oracle_scaling import ScalingSummary
from .spectral_density import SQRT2, CoefficientSequence, DensityModel, cov_psi_matrix, theta_toeplitz

log = logging.getLogger(__name__)


class ConstructionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# g_n^1
# ---------------------------------------------------------------------------

def _block_quadratic(w: np.ndarray, M: np.ndarray) -> np.ndarray:
    """q[m] = sum_{a,b < m+1} w_a w_b M_ab for m = 0..len(w)-1 (nested leading blocks)."""
    if w.size == 0:
        return np.zeros(0)
    A = np.outer(w, w) * M
    C = np.cumsum(np.cumsum(A, axis=0), axis=1)
    return np.diagonal(C).copy()


def _toeplitz_block_quadratic(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """_block_quadratic for M_ab = t[|a - b|], in O(N) memory."""
    if w.size == 0:
        return np.zeros(0)
    cross = np.convolve(w, np.concatenate([[0.0], t[1:w.size]]))[:w.size]
    return np.cumsum(w * w * t[0] + 2.0 * w * cross)


def g1_from_theta(seq: CoefficientSequence, sc: ScalingSummary, j_lo: int, j_hi: int) -> GridFunction:
    """sgn(j) g1(j/Delta) = (4/(n_v e^2)) * u_j' M u_j with u_j = theta on the block between k* and k*+j."""
    ks = sc.k_star
    if j_lo < -ks or j_lo > 0 or j_hi < 0:
        raise IndexError("grid must satisfy -k* <= j_lo <= 0 <= j_hi")
    c = 4.0 / (sc.n_v * sc.e_frak ** 2)
    right = np.arange(ks + 1, ks + j_hi + 1)
    left = np.arange(ks, ks + j_lo, -1)          # k*, k*-1, ..., k*+j_lo+1
    # consecutive indices: M is Toeplitz with weights theta_d, off-diagonal / sqrt 2
    lag = np.arange(max(right.size, left.size, 1))
    t = seq.theta(lag) * np.where(lag == 0, 1.0, 1.0 / SQRT2)
    qr = _toeplitz_block_quadratic(seq.theta(right), t)
    ql = _toeplitz_block_quadratic(seq.theta(left), t)
    vals = np.concatenate([-c * ql[::-1], [0.0], c * qr])
    return GridFunction(np.arange(j_lo, j_hi + 1), vals, sc.delta, "g1")


# ---------------------------------------------------------------------------
# monotone correction
# ---------------------------------------------------------------------------

@dataclass
class MonotoneResult:
    x: np.ndarray               # merged knots (original grid + breakpoints)
    g: np.ndarray
    breakpoints: np.ndarray
    hypothesis_ok: bool
    checks: dict = field(default_factory=dict)

    def at(self, xq) -> np.ndarray:
        return np.interp(xq, self.x, self.g)


def check_monotone_hypothesis(x, g0, h, eps, tol: float = 1e-12) -> bool:
    """-eps(t) <= g0(t) - g0(s) <= max(h(t) - h(s), eps(t)) for knots s < t."""
    x = np.asarray(x, float)
    n = x.size
    for a in range(0, n, 512):
        t = slice(a, min(n, a + 512))
        d = g0[t][:, None] - g0[None, :]
        dh = h[t][:, None] - h[None, :]
        e = eps[t][:, None]
        lower = d >= -e - tol
        upper = d <= np.maximum(dh, e) + tol * (1 + np.abs(d))
        mask = np.arange(n)[None, :] < np.arange(t.start, t.stop)[:, None]
        if not np.all((lower & upper) | ~mask):
            return False
    return True


def _first_crossing(x, y, start_x, start_y, level):
    """Smallest z >= start_x where the piecewise-linear y (knots x, value start_y at
    start_x) reaches level; inf if never."""
    # knots strictly after start_x
    k = np.searchsorted(x, start_x, side="right")
    xs = np.concatenate([[start_x], x[k:]])
    ys = np.concatenate([[start_y], y[k:]])
    hit = np.nonzero(ys >= level)[0]
    if hit.size == 0:
        return np.inf
    i = hit[0]
    if i == 0:
        return start_x
    x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
    z = x0 + (level - y0) * (x1 - x0) / (y1 - y0)
    return float(min(max(z, x0), x1))


def monotone_correct(x, g0, h_plus, eps) -> MonotoneResult:
    """Non-decreasing g close to g0 (|g - g0| <= 6 eps) whose increments never
    exceed those of h_plus, when g0's own increments are controlled by h_plus
    and eps.  Built by the breakpoint induction: between x_i and x_{i+1}, g is
    either flat (when eps grew by 3/2) or a rescaled copy of h_plus that gains
    exactly g0(x_{i+1}) - g0(x_i).
    """
    x = np.asarray(x, float)
    g0 = np.asarray(g0, float)
    h = np.asarray(h_plus, float)
    eps = np.asarray(eps, float)
    if x[0] != 0 or np.any(np.diff(x) <= 0):
        raise ValueError("knots must start at 0 and increase")
    if eps[0] <= 0 or np.any(np.diff(eps) < 0):
        raise ValueError("eps must be positive and non-decreasing")
    hyp = check_monotone_hypothesis(x, g0, h, eps)

    lin = lambda y, z: float(np.interp(z, x, y))
    X = x[-1]
    bps = [0.0]
    flat = []            # flag for the segment ending at each breakpoint
    xi = 0.0
    while True:
        gi, ei = lin(g0, xi), lin(eps, xi)
        z1 = _first_crossing(x, g0, xi, gi, gi + 2 * ei)
        z2 = _first_crossing(x, eps, xi, ei, 1.5 * ei)
        z = min(z1, z2)
        if not np.isfinite(z) or z > X:
            break
        if z <= xi:   # cannot happen for continuous inputs with eps > 0
            raise ConstructionError("breakpoint sequence failed to advance")
        bps.append(z)
        # flat when eps triggered; re-testing eps(z) >= 1.5 eps(x_i) can miss by an ulp
        flat.append(z2 <= z1)
        xi = z
        # on a knot segment where g0 is linear and eps constant, the remaining
        # crossings are equally spaced: emit them in one go
        k = int(np.searchsorted(x, z, side="left"))
        if z1 <= z2 and 0 < k < x.size and eps[k] == eps[k - 1]:
            m = (g0[k] - g0[k - 1]) / (x[k] - x[k - 1])
            if m > 0:
                step = 2 * lin(eps, z) / m
                extra = z + step * np.arange(1, int((x[k] - z) / step) + 1)
                extra = extra[extra < x[k]]
                if extra.size:
                    bps.extend(extra.tolist())
                    flat.extend([False] * extra.size)
                    xi = float(extra[-1])
    bps = np.array(bps)
    flat = np.array(flat, dtype=bool)

    grid = np.union1d(x, bps)
    hg = np.interp(grid, x, h)
    g0g = np.interp(grid, x, g0)
    # segment s spans (bps[s-1], bps[s]]; on it g is flat or a rescaled copy of h
    hb = np.interp(bps, x, h)
    gbp = np.interp(bps, x, g0)
    dh = np.diff(hb)
    active = ~flat & (dh > 0)
    denom_bad = bool(np.any(~flat & (dh <= 0)))
    inc = np.where(active, np.diff(gbp), 0.0)
    base = g0[0] + np.concatenate([[0.0], np.cumsum(inc)])   # g at each breakpoint
    c = np.zeros(dh.size)
    c[active] = inc[active] / dh[active]
    seg = np.searchsorted(bps, grid, side="left")
    g = np.empty_like(grid)
    g[seg == 0] = g0[0]
    after = seg >= bps.size
    g[after] = base[-1]          # flat after the last breakpoint
    mid = ~after & (seg > 0)
    s_ = seg[mid] - 1
    g[mid] = base[s_] + c[s_] * (hg[mid] - hb[s_])
    tol = 1e-9
    dgrid = np.diff(g)
    checks = {
        "non_decreasing": bool(np.all(dgrid >= -tol)),
        "within_6eps": bool(np.all(np.abs(g - g0g) <= 6 * np.interp(grid, x, eps) + tol)),
        "increments_le_h": bool(np.all(dgrid <= np.diff(hg) + tol * (1 + np.abs(dgrid)))),
        "zero_denominator": denom_bad,
    }
    return MonotoneResult(grid, g, bps, hyp, checks)


# ---------------------------------------------------------------------------
# g_n
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsSpec:
    c: float = 1.0
    u: float = 0.1

    def value(self, n: int) -> float:
        return self.c * n ** (-self.u)


@dataclass
class TimeChange:
    g: GridFunction            # final g_n (stage "g")
    g1: GridFunction
    g2: GridFunction
    checks: dict
    hypothesis_ok: dict
    mode: str


def _h_plus_right(f: GridFunction, sc: ScalingSummary, S: float, j) -> np.ndarray:
    a = j / sc.delta
    return -(8 * S / (sc.n_v * sc.e_frak)) * f.at(j) + 8 * S * a


def _h_plus_left(f: GridFunction, sc: ScalingSummary, S: float, j) -> np.ndarray:
    # argument u = -alpha >= 0, j is the (non-positive) knot
    return (8 * S / (sc.n_v * sc.e_frak)) * f.at(j) + 8 * S * (-j / sc.delta)


def timechange_checks(g: GridFunction, f: GridFunction, sc: ScalingSummary, l2: float, S: float,
                      tol: float = 1e-9) -> dict:
    """Items 1-3 of the approximation theorem and the |g| upper bound, at knots."""
    a = g.alpha
    v = g.values
    fv = f.at(g.j)
    c = 8 * S / (sc.n_v * sc.e_frak)
    d = np.diff(v)
    da = np.diff(a)
    same_side = (g.j[:-1] >= 0) | (g.j[1:] <= 0)
    upper = -c * np.diff(fv) + (8 * S + 4 * l2) * da
    scale = 1 + np.abs(v[:-1])
    return {
        "g_zero_at_zero": abs(g.at(0)) <= tol,
        "g_slope_ge_4norm2": bool(np.all(d >= 4 * l2 * da - tol * scale)),
        "g_increment_upper": bool(np.all((d <= upper + tol * scale) | ~same_side)),
        "g_abs_le_20f_12": bool(np.all(np.abs(v) <= 20 * S * fv + 12 * S + tol * (1 + np.abs(v)))),
    }


def _isotonic_half(y: np.ndarray) -> np.ndarray:
    w = np.ones_like(y)
    w[0] = 1e12
    out = isotonic_regression(y, weights=w, increasing=True).x
    return out - out[0]


def build_gn(seq: CoefficientSequence, sc: ScalingSummary, f: GridFunction, model: DensityModel,
             eps: EpsSpec = EpsSpec(), mode: str = "lemma", strict: bool = True,
             j_lo: Optional[int] = None, j_hi: Optional[int] = None) -> TimeChange:
    """g_n = g_n^2 + 4 ||s||^2 alpha, g_n^2 the monotone correction of g_n^1 on each side."""
    j_lo = f.j_lo if j_lo is None else j_lo
    j_hi = f.j_hi if j_hi is None else j_hi
    g1 = g1_from_theta(seq, sc, j_lo, j_hi)
    S = model.sup_norm
    l2 = model.l2_norm_sq
    e0 = eps.value(sc.n)
    jr = np.arange(0, j_hi + 1)
    jl = np.arange(0, j_lo - 1, -1)          # 0, -1, ..., j_lo
    y_r = g1.at(jr)
    y_l = -g1.at(jl)                          # g0(u) = -g1(-u), u = -j/Delta
    hyp = {}
    if mode == "lemma":
        out = []
        for js, y, hfun, side in ((jr, y_r, _h_plus_right, "right"), (jl, y_l, _h_plus_left, "left")):
            if js.size == 1:
                out.append(np.zeros(1))
                hyp[side] = True
                continue
            u = np.abs(js) / sc.delta
            res = monotone_correct(u, y, hfun(f, sc, S, js), np.full(js.size, e0))
            hyp[side] = res.hypothesis_ok
            out.append(res.at(u))
        g2r, g2l = out
    elif mode == "isotonic":
        g2r, g2l = _isotonic_half(y_r), _isotonic_half(y_l)
        hyp = {"right": None, "left": None}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    g2r = g2r - g2r[0]
    g2l = g2l - g2l[0]
    v2 = np.concatenate([-g2l[::-1][:-1], g2r])
    js = np.arange(j_lo, j_hi + 1)
    g2 = GridFunction(js, v2, sc.delta, "g2")
    g = GridFunction(js, v2 + 4 * l2 * js / sc.delta, sc.delta, "g")
    checks = timechange_checks(g, f, sc, l2, S)
    if strict and not all(checks.values()):
        bad = [k for k, ok in checks.items() if not ok]
        raise ConstructionError(f"g_n violates {bad}")
    return TimeChange(g, g1, g2, checks, hyp, mode)


# ---------------------------------------------------------------------------
# kernels and paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovKernel:
    points: np.ndarray
    matrix: np.ndarray
    tag: str = "empirical"

    def __post_init__(self):
        m = np.asarray(self.matrix, float)
        if m.shape != (len(self.points), len(self.points)):
            raise ValueError("kernel matrix shape does not match the grid")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * (1 + np.abs(m).max(initial=0))):
            raise ValueError("kernel matrix must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0]) if self.matrix.size else 0.0


def K_of_g(g: GridFunction, j=None) -> CovKernel:
    """g(min) on positive pairs, -g(max) on negative pairs, 0 across signs."""
    j = g.j if j is None else np.asarray(j, dtype=np.int64)
    v = g.at(j)
    if np.any(np.diff(g.values) < -1e-12) or abs(g.at(0)) > 1e-12:
        raise ValueError("K(g) needs g(0) = 0 and g non-decreasing")
    J1, J2 = np.meshgrid(j, j, indexing="ij")
    V1, V2 = np.meshgrid(v, v, indexing="ij")
    pos = (J1 > 0) & (J2 > 0)
    neg = (J1 < 0) & (J2 < 0)
    K = np.where(pos, np.where(J1 <= J2, V1, V2), 0.0)
    K = np.where(neg, -np.where(J1 >= J2, V1, V2), K)
    return CovKernel(j / g.delta, K, "K_of_g")


@dataclass(frozen=True)
class GaussianPath:
    j: np.ndarray
    values: np.ndarray       # (n_paths, len(j))
    delta: int
    V: int
    seed: Optional[int] = None


def simulate_path(g: GridFunction, V: int, rng: np.random.Generator, n_paths: int = 1,
                  seed: Optional[int] = None) -> GaussianPath:
    """W_{g/V} on g's knots, built outward from 0 with independent increments."""
    if V < 1:
        raise ValueError("V must be >= 1")
    d = np.diff(g.values)
    if np.any(d < -1e-12):
        raise ValueError("negative increment: g is not non-decreasing")
    d = np.maximum(d, 0.0)
    z = g.at(0) if g.j_lo <= 0 <= g.j_hi else None
    if z is None or abs(z) > 1e-12:
        raise ValueError("g must vanish at 0 on the grid")
    i0 = -g.j_lo
    W = np.zeros((n_paths, g.j.size))
    right = d[i0:]
    left = d[:i0][::-1]
    if right.size:
        W[:, i0 + 1:] = np.cumsum(rng.standard_normal((n_paths, right.size)) * np.sqrt(right / V), axis=1)
    if left.size:
        W[:, :i0][:, ::-1] = np.cumsum(rng.standard_normal((n_paths, left.size)) * np.sqrt(left / V), axis=1)
    return GaussianPath(g.j, W, g.delta, V, seed)


def approx_process(f: GridFunction, path: GaussianPath, which: int = 0) -> GridFunction:
    fv = f.at(path.j)
    return GridFunction(path.j, fv - path.values[which], f.delta, "f_minus_W")


# ---------------------------------------------------------------------------
# exact conditional covariance of Z
# ---------------------------------------------------------------------------

def _theta_hat_array(theta_hat):
    return getattr(theta_hat, "theta_hat", np.asarray(theta_hat, float))


def cond_cov_Z_matrix(theta_hat, seq: CoefficientSequence, sc: ScalingSummary, j) -> np.ndarray:
    """Cov(Z(j1/Delta), Z(j2/Delta) | training data) for all pairs of knots in j."""
    th = _theta_hat_array(theta_hat)
    j = np.asarray(j, dtype=np.int64)
    ks = sc.k_star
    lo = ks + min(int(j.min()), 0) + 1
    hi = ks + max(int(j.max()), 0)
    if lo < 1 or hi > th.size - 1:
        raise IndexError("knots need coefficients outside the available range")
    idx = np.arange(lo, hi + 1)
    w = th[idx]
    A = np.outer(w, w) * cov_psi_matrix(seq, idx) if idx.size else np.zeros((0, 0))
    P = np.zeros((idx.size + 1, idx.size + 1))
    P[1:, 1:] = np.cumsum(np.cumsum(A, axis=0), axis=1)
    start = ks + np.minimum(j, 0) + 1 - lo       # block (k* - (j)_-, k* + (j)_+]
    stop = ks + np.maximum(j, 0) + 1 - lo
    s1, s2 = np.meshgrid(start, start, indexing="ij")
    e1, e2 = np.meshgrid(stop, stop, indexing="ij")
    block = P[e1, e2] - P[s1, e2] - P[e1, s2] + P[s1, s2]
    sg = np.sign(j)
    return np.outer(sg, sg) * 4.0 / (sc.n_v * sc.e_frak ** 2) * block


def cond_cov_Z(theta_hat, seq: CoefficientSequence, sc: ScalingSummary, j1: int, j2: int) -> float:
    return float(cond_cov_Z_matrix(theta_hat, seq, sc, np.array([j1, j2]))[0, 1])


def E_stat(theta_hat, seq: CoefficientSequence, m1: int, m2: int, m3: int) -> float:
    """Double sum of theta_hat theta_hat Cov(psi, psi) over (m(1), m(2)] x (m(2), m(3)]."""
    a, b, c = sorted((int(m1), int(m2), int(m3)))
    if a == b or b == c:
        return 0.0
    th = _theta_hat_array(theta_hat)
    i1 = np.arange(a + 1, b + 1)
    i2 = np.arange(b + 1, c + 1)
    C = cov_psi_matrix(seq, np.concatenate([i1, i2]))[: i1.size, i1.size:]
    return float(th[i1] @ C @ th[i2])


# ---------------------------------------------------------------------------
# Gaussian coupling
# ---------------------------------------------------------------------------

def psd_repair(K: np.ndarray, tol: float = 1e-10):
    """Symmetrise and clip negative eigenvalues at 0.  Returns (K_psd, eigvals, eigvecs, repair)."""
    K = 0.5 * (np.asarray(K, float) + np.asarray(K, float).T)
    w, U = np.linalg.eigh(K)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w[0] < -tol * scale:
        raise ValueError(f"kernel is indefinite beyond tolerance (min eigenvalue {w[0]:.3e})")
    repair = float(-w[w < 0].sum()) if np.any(w < 0) else 0.0
    if repair > 0:
        log.info("psd repair: clipped eigenvalue mass %.3e", repair)
    w = np.maximum(w, 0.0)
    return (U * w) @ U.T, w, U, repair


def sqrtm_psd(K: np.ndarray) -> np.ndarray:
    _, w, U, _ = psd_repair(K)
    return (U * np.sqrt(w)) @ U.T


def wasserstein2_sq(KX: np.ndarray, KY: np.ndarray) -> float:
    """Tr(KX + KY - 2 (KX^1/2 KY KX^1/2)^1/2) for centred Gaussians."""
    rx = sqrtm_psd(KX)
    mid = sqrtm_psd(rx @ KY @ rx)
    return float(np.trace(KX) + np.trace(KY) - 2.0 * np.trace(mid))


@dataclass(frozen=True)
class Coupling:
    X: np.ndarray        # (n_draws, d)
    Y: np.ndarray
    w2_sq: float
    A: np.ndarray
    B: np.ndarray


def gaussian_coupling(KX, KY, rng: np.random.Generator, n_draws: int = 1) -> Coupling:
    """Optimal coupling of N(0, KX) and N(0, KY) driven by one standard Gaussian.

    X = KX^1/2 xi and Y = KY^1/2 U xi, where the orthogonal U comes from the
    polar factor of KY^1/2 KX^1/2; E|X - Y|^2 then equals the Wasserstein
    distance, including for singular kernels.
    """
    KX = getattr(KX, "matrix", KX)
    KY = getattr(KY, "matrix", KY)
    KX = np.atleast_2d(np.asarray(KX, float))
    KY = np.atleast_2d(np.asarray(KY, float))
    if KX.shape != KY.shape:
        raise ValueError("kernel dimensions differ")
    A = sqrtm_psd(KX)
    ry = sqrtm_psd(KY)
    P, _, Qt = np.linalg.svd(ry @ A)
    B = ry @ P @ Qt
    xi = rng.standard_normal((n_draws, KX.shape[0]))
    return Coupling(xi @ A.T, xi @ B.T, wasserstein2_sq(KX, KY), A, B)


# ---------------------------------------------------------------------------
# Brownian bridge integral
# ---------------------------------------------------------------------------

def simulate_bridge(u: np.ndarray, rng: np.random.Generator, n_paths: int = 1) -> np.ndarray:
    """Brownian bridge on [0,1] at increasing times u (exact, via Brownian increments)."""
    u = np.asarray(u, float)
    if np.any(np.diff(u) < 0):
        raise ValueError("times must be non-decreasing")
    t = np.concatenate([[0.0], u, [1.0]])
    dt = np.maximum(np.diff(t), 0.0)
    W = np.cumsum(rng.standard_normal((n_paths, dt.size)) * np.sqrt(dt), axis=1)
    return W[:, :-1] - u[None, :] * W[:, -1:]


def bridge_integral(x: np.ndarray, f_prime: np.ndarray, F: np.ndarray, u: np.ndarray,
                    B: np.ndarray) -> np.ndarray:
    """-int_0^1 f'(x) B(F(x)) dx by the trapezoid rule (B may hold several paths)."""
    x = np.asarray(x, float)
    if np.max(np.diff(x)) > 1e-3 + 1e-15:
        raise ValueError("quadrature step must be <= 1e-3")
    B = np.atleast_2d(B)
    BF = np.array([np.interp(F, u, b) for b in B])
    out = -trapezoid(f_prime[None, :] * BF, x, axis=1)
    return out if out.size > 1 else float(out[0])

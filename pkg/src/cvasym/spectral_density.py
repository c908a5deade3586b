"""Cosine-series densities on [0, 1].

A density is s = sum_j theta_j psi_j with psi_0 = 1 and
psi_j(x) = sqrt(2) cos(2 pi j x).  Coefficients are stored up to some index J
and continued by a closed-form tail rule, so that tail sums, norms and the
oracle quantities built on top of them never rely on blind truncation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import mpmath
import numpy as np
from scipy import special

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi

# relative slack used when comparing squared coefficients with 1/n style
# thresholds; keeps exact ties (plateau heights) on the qualifying side
REL_TOL = 1e-12


def geq(a, b, rtol: float = REL_TOL):
    """a >= b up to a relative rounding slack."""
    return a >= b - rtol * np.maximum(np.abs(b), np.abs(a))


class ParameterError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TailRule:
    """theta_j for j > J.  geometric: scale * r**j, polynomial: kappa * j**-beta."""

    kind: str = "zero"
    r: float = 0.0
    scale: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "geometric", "polynomial"):
            raise ParameterError(f"unknown tail rule {self.kind!r}")
        if self.kind == "geometric" and not 0.0 < self.r < 1.0:
            raise ParameterError("geometric tail needs ratio r in (0, 1)")
        if self.kind == "polynomial" and not self.beta > 1.0:
            raise ParameterError("polynomial tail needs exponent beta > 1")

    def value(self, j):
        j = np.asarray(j, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(j)
        if self.kind == "geometric":
            return self.scale * self.r ** j
        with np.errstate(divide="ignore"):
            return self.kappa * j ** (-self.beta)

    def sq_sum_from(self, m):
        """sum_{j >= m} theta_j**2 for m >= 1 (vectorised)."""
        m = np.asarray(m, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(m)
        if self.kind == "geometric":
            return self.scale ** 2 * self.r ** (2 * m) / (1.0 - self.r ** 2)
        return self.kappa ** 2 * special.zeta(2 * self.beta, m)

    def abs_sum_from(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(m)
        if self.kind == "geometric":
            return abs(self.scale) * self.r ** m / (1.0 - self.r)
        return abs(self.kappa) * special.zeta(self.beta, m)

    def last_index_at_least(self, thr: float, start: int) -> int:
        """Largest j >= start with value(j)**2 >= thr, or start - 1 if none.

        Tail values have monotone decreasing squares.
        """
        if self.kind == "zero":
            return start - 1
        if thr <= 0:
            raise ParameterError("threshold must be positive for a non-zero tail")
        if self.kind == "geometric":
            if self.scale == 0:
                return start - 1
            guess = math.log(thr / self.scale ** 2) / (2 * math.log(self.r))
        else:
            if self.kappa == 0:
                return start - 1
            guess = (self.kappa ** 2 / thr) ** (1.0 / (2 * self.beta))
        j = max(start - 1, int(math.floor(guess)) + 2)
        while j >= start and not geq(float(self.value(j)) ** 2, thr):
            j -= 1
        return j


@dataclass(frozen=True)
class CoefficientSequence:
    coeffs: np.ndarray
    tail: TailRule = TailRule()
    label: str = "custom"
    _csq: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).copy()
        if c.ndim != 1 or c.size == 0:
            raise ParameterError("coeffs must be a non-empty 1-d list")
        if c[0] != 1.0:
            raise ParameterError("theta_0 must equal 1")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        # reversed cumulative sums: _csq[k] = sum_{k < j <= J} theta_j^2
        sq = c ** 2
        rc = np.concatenate([np.cumsum(sq[::-1])[::-1][1:], [0.0]])
        object.__setattr__(self, "_csq", rc)

    @property
    def J(self) -> int:
        return self.coeffs.size - 1

    def theta(self, j):
        j = np.asarray(j)
        scalar = j.ndim == 0
        j = np.atleast_1d(j).astype(np.int64)
        if np.any(j < 0):
            raise IndexError("negative coefficient index")
        out = np.empty(j.shape, dtype=float)
        inside = j <= self.J
        out[inside] = self.coeffs[j[inside]]
        out[~inside] = self.tail.value(j[~inside])
        return float(out[0]) if scalar else out

    def theta_sq(self, j):
        t = self.theta(j)
        return t * t

    def tail_sq(self, k):
        """sum_{j > k} theta_j^2, k >= -1 (so tail_sq(-1) is the squared L2 norm)."""
        k = np.asarray(k)
        scalar = k.ndim == 0
        k = np.atleast_1d(k).astype(np.int64)
        out = np.empty(k.shape, dtype=float)
        inside = k < self.J
        ki = k[inside]
        stored = self._csq[np.maximum(ki, 0)] + np.where(ki < 0, self.coeffs[0] ** 2, 0.0)
        out[inside] = stored + self.tail.sq_sum_from(self.J + 1)
        out[~inside] = self.tail.sq_sum_from(k[~inside] + 1)
        return float(out[0]) if scalar else out

    def abs_tail(self, k: int) -> float:
        """sum_{j > k} |theta_j|."""
        k = int(k)
        stored = float(np.abs(self.coeffs[k + 1:]).sum()) if k < self.J else 0.0
        return stored + float(self.tail.abs_sum_from(max(k, self.J) + 1))

    @property
    def l2_norm_sq(self) -> float:
        return float(self.tail_sq(-1))

    @property
    def ell1_norm(self) -> float:
        return self.abs_tail(-1)

    @property
    def monotone_sq(self) -> bool:
        sq = self.coeffs[1:] ** 2
        if sq.size > 1 and np.any(np.diff(sq) > REL_TOL * sq[:-1]):
            return False
        if self.tail.kind == "zero":
            return True
        nxt = float(self.tail.value(self.J + 1)) ** 2
        return self.J == 0 or nxt <= self.coeffs[-1] ** 2 * (1 + REL_TOL)

    def last_index_at_least(self, thr: float) -> int:
        """Largest j with theta_j^2 >= thr (global max, tail included)."""
        stored = np.nonzero(geq(self.coeffs ** 2, thr))[0]
        best = int(stored[-1]) if stored.size else -1
        t = self.tail.last_index_at_least(thr, self.J + 1) if self.tail.kind != "zero" else self.J
        return max(best, t) if t > self.J else best

    def family_dict(self) -> dict:
        return {"label": self.label}


def make_family(kind: str, **params) -> CoefficientSequence:
    """Build one of the reference coefficient families.

    uniform; geometric(r); polynomial(beta, kappa=1); plateau(h, u).
    """
    if kind == "uniform":
        return CoefficientSequence(np.array([1.0]), TailRule("zero"), "uniform")
    if kind == "geometric":
        r = float(Fraction(str(params["r"])))
        if not 0.0 < r < 1.0:
            raise ParameterError("geometric ratio must lie in (0, 1)")
        return CoefficientSequence(np.array([1.0]), TailRule("geometric", r=r, scale=1.0),
                                   f"geometric(r={params['r']})")
    if kind == "polynomial":
        beta = float(params["beta"])
        kappa = float(params.get("kappa", 1.0))
        if not beta > 1.0:
            raise ParameterError("polynomial exponent must exceed 1")
        return CoefficientSequence(np.array([1.0]), TailRule("polynomial", beta=beta, kappa=kappa),
                                   f"polynomial(beta={params['beta']},kappa={params.get('kappa', 1.0)})")
    if kind == "plateau":
        h = float(Fraction(str(params["h"])))
        u = int(params["u"])
        if h < 0 or u < 0 or not math.isfinite(h * u):
            raise ParameterError("plateau needs h >= 0 and an integer width u >= 0")
        c = np.concatenate([[1.0], np.full(u, math.sqrt(h))])
        return CoefficientSequence(c, TailRule("zero"), f"plateau(h={params['h']},u={u})")
    raise ParameterError(f"unknown family {kind!r}")


def parse_family(spec) -> CoefficientSequence:
    """'polynomial:beta=1.5,kappa=0.5' or a {kind: ..., params...} mapping."""
    if isinstance(spec, dict):
        d = dict(spec)
        return make_family(d.pop("kind"), **d)
    kind, _, rest = str(spec).partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = val.strip()
    if "u" in params:
        params["u"] = int(params["u"])
    if "beta" in params:
        params["beta"] = float(params["beta"])
    if "kappa" in params:
        params["kappa"] = float(Fraction(params["kappa"]))
    return make_family(kind.strip(), **params)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _partial_sum(seq: CoefficientSequence, x: np.ndarray, J: int) -> np.ndarray:
    """sum_{j <= J} theta_j psi_j(x) via the Chebyshev recurrence for cos(j t)."""
    t = TWO_PI * x
    c1 = np.cos(t)
    out = np.full_like(x, seq.coeffs[0])
    if J == 0:
        return out
    th = seq.theta(np.arange(1, J + 1))
    prev, cur = np.ones_like(x), c1
    for j in range(1, J + 1):
        if th[j - 1] != 0.0:
            out += SQRT2 * th[j - 1] * cur
        prev, cur = cur, 2.0 * c1 * cur - prev
    return out


def _poly_tail_exact(tail: TailRule, x: float, J: int) -> float:
    """sqrt(2) kappa sum_{j > J} j^-beta cos(2 pi j x) through the polylogarithm."""
    z = mpmath.exp(2j * mpmath.pi * mpmath.mpf(float(x)))
    full = mpmath.re(mpmath.polylog(tail.beta, z)) if (x % 1.0) != 0.0 else mpmath.zeta(tail.beta)
    head = math.fsum(j ** (-tail.beta) * math.cos(TWO_PI * j * x) for j in range(1, J + 1))
    return SQRT2 * tail.kappa * (float(full) - head)


def density_eval(seq: CoefficientSequence, x, trunc_tol: float = 1e-12):
    """s(x).  Geometric tails are summed in closed form; polynomial tails are
    truncated when the l1 tail bound allows, otherwise summed through the
    polylogarithm."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)):
        raise ValueError("x must lie in [0, 1]")
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    J = seq.J
    tail = seq.tail
    if tail.kind == "zero":
        out = _direct_sum(seq, xa, J)
    elif tail.kind == "geometric":
        out = _direct_sum(seq, xa, J)
        z = tail.r * np.exp(1j * TWO_PI * xa)
        out = out + SQRT2 * tail.scale * np.real(z ** (J + 1) / (1.0 - z))
    else:
        Jt = J
        while SQRT2 * seq.abs_tail(Jt) >= trunc_tol and Jt < 4096:
            Jt = max(2 * Jt, 64)
        if SQRT2 * seq.abs_tail(Jt) < trunc_tol:
            out = _direct_sum(seq, xa, Jt)
        else:
            out = _direct_sum(seq, xa, J)
            out = out + np.array([_poly_tail_exact(tail, xi, J) for xi in xa])
    return float(out[0]) if scalar else out


def _direct_sum(seq, x, J, chunk=1 << 20):
    """sum_{j<=J} theta_j psi_j(x) with explicit cosines (accurate for large J)."""
    out = np.full(x.shape, seq.coeffs[0], dtype=float)
    if J == 0:
        return out
    js = np.arange(1, J + 1)
    th = seq.theta(js)
    nz = th != 0
    js, th = js[nz], th[nz]
    if js.size == 0:
        return out
    step = max(1, chunk // js.size)
    for a in range(0, x.size, step):
        xs = x[a:a + step]
        out[a:a + step] += SQRT2 * np.cos(TWO_PI * np.outer(xs, js)) @ th
    return out


def _tail_bound(seq: CoefficientSequence, x: np.ndarray, J: int) -> np.ndarray:
    """Pointwise bound on |sum_{j > J} theta_j psi_j(x)| for J >= seq.J.

    Tail rules have constant sign and decreasing magnitude, so summation by
    parts gives |theta_{J+1}| / |sin(pi x)| next to the uniform l1 bound.
    """
    l1 = SQRT2 * seq.abs_tail(J)
    if seq.tail.kind == "zero":
        return np.zeros_like(x)
    s = np.abs(np.sin(np.pi * x))
    with np.errstate(divide="ignore"):
        abel = SQRT2 * abs(float(seq.tail.value(J + 1))) / s
    return np.minimum(l1, abel)


# ---------------------------------------------------------------------------
# the density model: norms, certification, sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityModel:
    seq: CoefficientSequence
    l2_norm_sq: float
    sup_norm: float
    sup_norm_lower: float
    ell1_norm: float
    min_lower: float
    nonneg_certified: bool

    @classmethod
    def from_seq(cls, seq: CoefficientSequence, grid: int = 20_000) -> "DensityModel":
        lo_min, hi_max, lo_max = _grid_bracket(seq, grid)
        l2 = seq.l2_norm_sq
        return cls(seq=seq, l2_norm_sq=l2, sup_norm=max(hi_max, l2), sup_norm_lower=lo_max,
                   ell1_norm=seq.ell1_norm, min_lower=lo_min, nonneg_certified=bool(lo_min >= 0.0))

    @property
    def envelope(self) -> float:
        return 1.0 + SQRT2 * self.seq.abs_tail(0)

    def sample(self, n: int, rng: np.random.Generator, seed: Optional[int] = None) -> "Sample":
        return sample(self, n, rng, seed)


def _grid_bracket(seq: CoefficientSequence, N: int):
    """(certified lower bound of min s, upper bound of max s, lower bound of max s)."""
    if seq.tail.kind == "zero":
        J = seq.J
    else:
        J = max(seq.J, 4096)
    x = np.arange(N) / N
    if J < N:
        a = np.zeros(N)
        a[0] = seq.coeffs[0]
        a[1:J + 1] = SQRT2 * seq.theta(np.arange(1, J + 1))
        vals = np.real(np.fft.fft(a))
    else:
        vals = _direct_sum(seq, x, J)
    js = np.arange(1, J + 1)
    lip = TWO_PI * SQRT2 * float(np.sum(js * np.abs(seq.theta(js)))) if J else 0.0
    slack = lip * 0.5 / N
    tail = SQRT2 * seq.abs_tail(J)
    return float(vals.min() - slack - tail), float(vals.max() + slack + tail), float(vals.max() - tail)


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("sample values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _accept(seq: CoefficientSequence, x: np.ndarray, level: np.ndarray) -> np.ndarray:
    """Decide level < s(x) exactly, refining the truncation only where needed."""
    tail = seq.tail
    if tail.kind != "polynomial":
        return level < density_eval(seq, x)
    decided = np.zeros(x.size, dtype=bool)
    accept = np.zeros(x.size, dtype=bool)
    todo = np.arange(x.size)
    for J in (max(seq.J, 64), max(seq.J, 1024), max(seq.J, 16384)):
        xs = x[todo]
        val = _partial_sum(seq, xs, J) if J <= 64 else _direct_sum(seq, xs, J)
        b = _tail_bound(seq, xs, J) + 1e-11
        lv = level[todo]
        yes = lv < val - b
        no = lv >= val + b
        accept[todo[yes]] = True
        decided[todo[yes | no]] = True
        todo = todo[~(yes | no)]
        if todo.size == 0:
            return accept
    for i in todo:
        accept[i] = level[i] < density_eval(seq, float(x[i]))
    return accept


def sample(model: DensityModel, n: int, rng: np.random.Generator, seed: Optional[int] = None) -> Sample:
    """Exact i.i.d. draws by rejection from the uniform envelope."""
    if not model.nonneg_certified:
        raise SamplingError("density is not certified non-negative; refusing to sample")
    if n == 0:
        return Sample(np.empty(0), seed)
    M = model.envelope
    rate = 1.0 / M
    if rate < 1e-3:
        raise SamplingError(f"envelope acceptance rate {rate:.2e} is below 1e-3")
    out = []
    have = 0
    while have < n:
        m = int((n - have) * M * 1.1) + 16
        x = rng.random(m)
        lev = rng.random(m) * M
        keep = x[_accept(model.seq, x, lev)]
        out.append(keep)
        have += keep.size
    return Sample(np.concatenate(out)[:n], seed)


# ---------------------------------------------------------------------------
# psi covariances and the theta_{|i-j|} matrix
# ---------------------------------------------------------------------------

def cov_psi(seq: CoefficientSequence, i, j):
    """Exact Cov(psi_i(X), psi_j(X)) for i, j >= 1 (broadcasts)."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if np.any(i < 1) or np.any(j < 1):
        raise IndexError("cov_psi needs indices >= 1")
    diag = i == j
    w = np.where(diag, 1.0, 1.0 / SQRT2)
    out = seq.theta(i + j) / SQRT2 + w * seq.theta(np.abs(i - j)) - seq.theta(i) * seq.theta(j)
    return float(out) if np.ndim(out) == 0 else out


def cov_psi_matrix(seq: CoefficientSequence, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return cov_psi(seq, idx[:, None], idx[None, :])


def theta_toeplitz(seq: CoefficientSequence, idx) -> np.ndarray:
    """M_ij = ((1 - d_ij)/sqrt 2 + d_ij) theta_|i-j| on an index set."""
    idx = np.asarray(idx, dtype=np.int64)
    d = np.abs(idx[:, None] - idx[None, :])
    return np.where(d == 0, 1.0, 1.0 / SQRT2) * seq.theta(d)


# ---------------------------------------------------------------------------
# regularity hypotheses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisConstants:
    c1: float = 1.0
    delta1: float = 0.0
    c2: float = 1e-6
    delta2: float = 3.0
    c3: float = 0.1
    delta3: float = 0.5
    delta4: float = 0.2
    delta5: float = 0.05

    def __post_init__(self):
        if min(self.c1, self.delta1, self.c2, self.delta2) < 0:
            raise ParameterError("c1, delta1, c2, delta2 must be >= 0")
        if min(self.c3, self.delta3, self.delta4, self.delta5) <= 0:
            raise ParameterError("c3, delta3, delta4, delta5 must be > 0")


@dataclass(frozen=True)
class HypothesisResult:
    holds_on_checked_range: bool
    first_violation: Optional[int] = None


@dataclass(frozen=True)
class HypothesisReport:
    constants: HypothesisConstants
    results: dict

    def __getitem__(self, key):
        return self.results[key]


def _first_false(mask, ks):
    bad = np.nonzero(~mask)[0]
    return HypothesisResult(bad.size == 0, int(ks[bad[0]]) if bad.size else None)


def fit_constants(seq: CoefficientSequence, k_check_max: int, delta1=0.0, delta2=3.0,
                  delta3=0.5, delta4=0.2, delta5=0.05) -> HypothesisConstants:
    """Tightest c1, c2, c3 on 1..k_check_max for the given exponents."""
    ks = np.arange(1, k_check_max + 1)
    tail = seq.tail_sq(ks)
    step = np.floor(ks ** delta3).astype(np.int64)
    num = seq.theta_sq(ks + step)
    den = seq.theta_sq(np.maximum(1, ks - step))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, np.inf)
    c3 = float(np.min(ratio))
    return HypothesisConstants(
        c1=float(np.max(tail * ks ** (2 + delta1))), delta1=delta1,
        c2=float(np.min(tail * ks ** delta2)), delta2=delta2,
        c3=c3 if np.isfinite(c3) and c3 > 0 else 1.0, delta3=delta3,
        delta4=delta4, delta5=delta5)


def check_hypotheses(seq: CoefficientSequence, constants: Optional[HypothesisConstants] = None,
                     k_check_max: int = 1000, n: Optional[int] = None,
                     n_t: Optional[int] = None) -> HypothesisReport:
    if k_check_max < 2:
        raise ValueError("k_check_max must be >= 2")
    if constants is None:
        constants = fit_constants(seq, k_check_max)
    c = constants
    ks = np.arange(1, k_check_max + 1)
    tail = seq.tail_sq(ks)
    res = {
        "hyp1": _first_false(tail <= c.c1 / ks ** (2 + c.delta1) * (1 + REL_TOL), ks),
        "hyp2": _first_false(geq(tail, c.c2 / ks ** c.delta2), ks),
    }
    step = np.floor(ks ** c.delta3).astype(np.int64)
    res["hyp3"] = _first_false(
        geq(seq.theta_sq(ks + step), c.c3 * seq.theta_sq(np.maximum(1, ks - step))), ks)
    if n is not None and n_t is not None:
        n_v = n - n_t
        res["hyp4"] = HypothesisResult(bool(n_v <= n ** (1 - c.delta4)))
        res["hyp5"] = HypothesisResult(bool(n_v >= n ** (2.0 / 3.0 + c.delta5)))
    return HypothesisReport(c, res)


@dataclass(frozen=True)
class NvWindow:
    lo: int
    hi: int

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    @property
    def mid(self) -> int:
        if self.empty:
            raise ValueError("empty window has no midpoint")
        return (self.lo + self.hi) // 2


def nt_window(n: int, delta4: float, delta5: float) -> NvWindow:
    """Admissible range of n - n_t: [ceil n^(2/3+d5), floor n^(1-d4)]."""
    if not (delta4 > 0 and delta5 > 0 and n >= 2):
        raise ValueError("need delta4 > 0, delta5 > 0 and n >= 2")
    lo = math.ceil(n ** (2.0 / 3.0 + delta5) - 1e-9)
    hi = math.floor(n ** (1.0 - delta4) + 1e-9)
    return NvWindow(lo, hi)

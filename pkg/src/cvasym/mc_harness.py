"""Experiment configs, seed splitting, the Monte Carlo experiments and record emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .cv_splits import fold_coefficients, holdout_from_coeffs, make_scheme, select_k
from .limit_process import K_of_g, build_gn, cond_cov_Z_matrix, gaussian_coupling, simulate_path
from .oracle_scaling import (risk_shape, scaling, shape_checks, window, window_mass)
from .series_estimator import coeff_means, psi_matrix, risk_curve
from .spectral_density import (DensityModel, check_hypotheses, make_family, nt_window, parse_family,
                               sample)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


HEADER = ("experiment", "family", "n", "n_t", "V", "replicate", "statistic", "value", "seed")


class ConfigError(ValueError):
    """Raised with one 'field: problem' line per violation."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base: int, *keys: int) -> int:
    """Fold each key into the base seed with one splitmix64 round per key.

    Replicate r of the (n, n_t) cell uses derive_seed(base_seed, n, n_t, r);
    sub-streams inside a replicate append a further key.
    """
    s = splitmix64(int(base) & _MASK)
    for k in keys:
        s = splitmix64(s ^ (int(k) & _MASK))
    return s


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    family: str = "polynomial:beta=1.5,kappa=0.5"
    n: Tuple[int, ...] = (1000,)
    n_t: Optional[Tuple[int, ...]] = None
    n_t_rule: str = "explicit"          # explicit | window | fraction
    n_t_fraction: float = 0.8
    delta4: float = 0.2
    delta5: float = 0.05
    V: Tuple[int, ...] = (1,)
    x: float = 1.0
    replicates: int = 100
    base_seed: int = 0
    k_max: object = "auto"
    output: Optional[str] = None
    workers: int = 1
    params: dict = field(default_factory=dict)

    def pairs(self) -> List[Tuple[int, int]]:
        if self.n_t_rule == "explicit":
            return list(zip(self.n, self.n_t))
        if self.n_t_rule == "window":
            return [(n, n - nt_window(n, self.delta4, self.delta5).mid) for n in self.n]
        return [(n, int(round(self.n_t_fraction * n))) for n in self.n]

    def validate(self) -> "ExperimentConfig":
        p = []
        if self.experiment not in EXPERIMENTS:
            p.append(f"experiment: unknown {self.experiment!r} (choose from {sorted(EXPERIMENTS)})")
        if self.replicates < 1:
            p.append(f"replicates: must be >= 1, got {self.replicates}")
        if self.workers < 1:
            p.append(f"workers: must be >= 1, got {self.workers}")
        if not self.n:
            p.append("n: ladder is empty")
        for i, n in enumerate(self.n):
            if n < 2:
                p.append(f"n[{i}]: must be >= 2, got {n}")
        for i, V in enumerate(self.V):
            if V < 1:
                p.append(f"V[{i}]: must be >= 1, got {V}")
        if not self.x > 0:
            p.append(f"x: must be positive, got {self.x}")
        if not (self.k_max == "auto" or (isinstance(self.k_max, int) and self.k_max >= 1)):
            p.append(f"k_max: must be 'auto' or a positive integer, got {self.k_max!r}")
        try:
            parse_family(self.family)
        except Exception as exc:       # surfaced as a config problem
            if self.experiment not in ("lemma_sweep", "coupling_check"):
                p.append(f"family: {exc}")
        if self.experiment in _PAIRED:
            if self.n_t_rule == "explicit":
                if self.n_t is None or len(self.n_t) != len(self.n):
                    p.append("n_t: explicit rule needs one n_t per entry of n")
            elif self.n_t_rule == "window":
                for i, n in enumerate(self.n):
                    if nt_window(n, self.delta4, self.delta5).empty:
                        p.append(f"n[{i}]: validation-size window is empty for n={n}")
            elif self.n_t_rule == "fraction":
                if not 0 < self.n_t_fraction < 1:
                    p.append(f"n_t_fraction: must lie in (0, 1), got {self.n_t_fraction}")
            else:
                p.append(f"n_t_rule: unknown {self.n_t_rule!r}")
            if not p:
                for i, (n, nt) in enumerate(self.pairs()):
                    if not 1 <= nt <= n - 1:
                        p.append(f"n_t[{i}]: need 1 <= n_t <= n-1, got n={n}, n_t={nt}")
                    for jv, V in enumerate(self.V):
                        if V * (n - nt) > n:
                            p.append(f"V[{jv}]: V*(n-n_t) = {V * (n - nt)} exceeds n = {n} at n[{i}]")
        if p:
            raise ConfigError(p)
        return self


def _as_tuple(v, name, problems):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        out = []
        for i, a in enumerate(v):
            if isinstance(a, bool) or not isinstance(a, int):
                problems.append(f"{name}[{i}]: expected integer, got {a!r}")
            else:
                out.append(a)
        return tuple(out)
    if isinstance(v, int) and not isinstance(v, bool):
        return (v,)
    problems.append(f"{name}: expected integer or list of integers, got {v!r}")
    return ()


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    problems = [f"{k}: unknown field" for k in d if k not in known]
    if "experiment" not in d:
        problems.append("experiment: required")
    for key in ("n", "n_t", "V"):
        if key in d:
            d[key] = _as_tuple(d[key], key, problems)
    if "family" in d and isinstance(d["family"], dict):
        fam = dict(d["family"])
        d["family"] = fam.pop("kind", "?") + (":" + ",".join(f"{k}={v}" for k, v in fam.items())
                                               if fam else "")
    if "experiment" in d:
        # validate the known fields too, so one error message lists everything
        try:
            cfg = ExperimentConfig(**{k: v for k, v in d.items() if k in known})
            cfg.validate()
        except ConfigError as exc:
            problems += exc.problems
        except TypeError as exc:
            problems.append(f"config: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class ExperimentRecord:
    experiment: str
    family: str
    n: int
    n_t: int
    V: int
    replicate: int
    statistic: str
    value: float
    seed: int

    def key(self):
        return (self.experiment, self.n, self.n_t, self.V, self.replicate, self.statistic)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def emit(records: Sequence[ExperimentRecord], fmt: str, path) -> None:
    """Write records as CSV (fixed header, 17 significant digits) or as a JSON array."""
    recs = sorted(records)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for r in recs:
                w.writerow([_fmt(getattr(r, h)) for h in HEADER])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump([{h: getattr(r, h) for h in HEADER} for r in recs], fh)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _typed(row: dict) -> ExperimentRecord:
    return ExperimentRecord(str(row["experiment"]), str(row["family"]), int(row["n"]), int(row["n_t"]),
                            int(row["V"]), int(row["replicate"]), str(row["statistic"]),
                            float(row["value"]), int(row["seed"]))


def read_records(path) -> List[ExperimentRecord]:
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            return [_typed(r) for r in json.load(fh)]
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != HEADER:
            raise ValueError(f"unexpected header {rd.fieldnames}")
        return [_typed(r) for r in rd]


@dataclass(frozen=True)
class Summary:
    mean: float
    stderr: float
    count: int
    single: bool          # stderr is 0 only because there is one value


def summarize(records: Sequence[ExperimentRecord], statistic: str,
              group_keys=("experiment", "family", "n", "n_t", "V")) -> Dict[tuple, Summary]:
    """Two-pass mean and standard error of one statistic per group (replicate >= 0 only)."""
    groups: Dict[tuple, list] = {}
    for r in records:
        if r.statistic == statistic and r.replicate >= 0:
            groups.setdefault(tuple(getattr(r, k) for k in group_keys), []).append(r.value)
    out = {}
    for g, vals in sorted(groups.items()):
        v = np.asarray(vals, float)
        m = float(v.sum() / v.size)
        se = float(math.sqrt(((v - m) ** 2).sum() / (v.size - 1) / v.size)) if v.size > 1 else 0.0
        out[g] = Summary(m, se, int(v.size), v.size == 1)
    return out


# ---------------------------------------------------------------------------
# experiments
#
# Each experiment supplies prepare(cfg, n, n_t) -> ctx, one(cfg, ctx, rep, seed) -> rows
# and finish(cfg, ctx, rows) -> rows.  A row is (n, n_t, V, statistic, value); rows from
# one(...) get the replicate index and seed attached, rows from finish(...) get
# replicate = -1 and seed = base_seed.
# ---------------------------------------------------------------------------

Row = Tuple[int, int, int, str, float]


def _scaling_rows(sc) -> List[Row]:
    return [(sc.n, sc.n_t, 0, k, float(v)) for k, v in sc.as_record().items()]


def _knot_label(alpha: float) -> str:
    return f"{alpha:+.3f}"


def _model(cfg) -> Tuple:
    seq = parse_family(cfg.family)
    return seq, DensityModel.from_seq(seq)


# -- unbiasedness -----------------------------------------------------------

def _unb_prepare(cfg, n, n_t):
    seq, model = _model(cfg)
    K = int(cfg.params.get("k_last", 10)) if cfg.k_max == "auto" else int(cfg.k_max)
    return dict(seq=seq, model=model, n=n, n_t=n_t, K=K, sc=scaling(seq, n, n_t))


def _unb_one(cfg, ctx, rep, seed):
    """HO(k) + ||s||^2 - ||s_hat_k - s||^2, whose expectation is 0 for every k."""
    n, n_t, K = ctx["n"], ctx["n_t"], ctx["K"]
    x = sample(ctx["model"], n, _rng(seed)).values
    tr, te = coeff_means(x[:n_t], K), coeff_means(x[n_t:], K)
    d = holdout_from_coeffs(tr, te) + ctx["model"].l2_norm_sq - risk_curve(tr, ctx["seq"])
    return [(n, n_t, 1, f"d_k{k:03d}", float(d[k])) for k in range(K + 1)]


def _unb_finish(cfg, ctx, rows):
    out = _scaling_rows(ctx["sc"])
    n, n_t = ctx["n"], ctx["n_t"]
    for k in range(ctx["K"] + 1):
        v = np.array([r[4] for r in rows if r[3] == f"d_k{k:03d}"])
        m = float(v.mean())
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        out += [(n, n_t, 1, f"mean_d_k{k:03d}", m), (n, n_t, 1, f"stderr_d_k{k:03d}", se),
                (n, n_t, 1, f"z_d_k{k:03d}", m / se if se > 0 else 0.0)]
    return out


# -- variance ratio -----------------------------------------------------------

def _vr_prepare(cfg, n, n_t):
    seq, model = _model(cfg)
    sc = scaling(seq, n, n_t)
    alphas = [float(a) for a in cfg.params.get("alphas", [-0.5, 0.5, 1.0])]
    js = [int(round(a * sc.delta)) for a in alphas]
    if min(js) < -sc.k_star:
        raise ConfigError([f"params.alphas: knot {min(js)} lies below -k* = {-sc.k_star}"])
    return dict(seq=seq, model=model, sc=sc, js=js, alphas=alphas, k_max=sc.k_star + max(max(js), 0))


def _vr_one(cfg, ctx, rep, seed):
    """Rescaled hold-out (first fold) and V-fold criterion at the chosen knots.

    The permutation stream is shared across V, so fold 0 and hence the
    hold-out value are identical for every V of a replicate.
    """
    sc = ctx["sc"]
    s = sample(ctx["model"], sc.n, _rng(derive_seed(seed, 0)))
    P = psi_matrix(s.values, ctx["k_max"])
    ks, e = sc.k_star, sc.e_frak
    rows = []
    for V in cfg.V:
        scheme = make_scheme(sc.n, sc.n_t, V, _rng(derive_seed(seed, 1)))
        tr, te = fold_coefficients(s, scheme, ctx["k_max"], P=P)
        ho = holdout_from_coeffs(tr, te)
        for a, j in zip(ctx["alphas"], ctx["js"]):
            h = (ho[:, ks + j] - ho[:, ks]) / e
            rows.append((sc.n, sc.n_t, V, f"ho_a{_knot_label(a)}", float(h[0])))
            rows.append((sc.n, sc.n_t, V, f"cv_a{_knot_label(a)}", float(h.mean())))
    return rows


def _vr_finish(cfg, ctx, rows):
    sc = ctx["sc"]
    out = _scaling_rows(sc)
    for V in cfg.V:
        for a, j in zip(ctx["alphas"], ctx["js"]):
            lab = _knot_label(a)
            ho = np.array([r[4] for r in rows if r[2] == V and r[3] == f"ho_a{lab}"])
            cv = np.array([r[4] for r in rows if r[2] == V and r[3] == f"cv_a{lab}"])
            vh, vc = float(ho.var(ddof=1)), float(cv.var(ddof=1))
            ratio = vc / vh if vh > 0 else float("nan")
            out += [(sc.n, sc.n_t, V, f"var_ho_a{lab}", vh), (sc.n, sc.n_t, V, f"var_cv_a{lab}", vc),
                    (sc.n, sc.n_t, V, f"ratio_a{lab}", ratio),
                    (sc.n, sc.n_t, V, f"ratio_times_V_a{lab}", ratio * V),
                    (sc.n, sc.n_t, V, f"knot_a{lab}", float(j))]
    return out


# -- covariance match -----------------------------------------------------------

def _g_context(cfg, n, n_t):
    seq, model = _model(cfg)
    sc = scaling(seq, n, n_t)
    if sc.degenerate:
        raise ConfigError([f"n_t: scaling is degenerate (Delta = 0) at n={n}, n_t={n_t}"])
    f = risk_shape(seq, sc, x_max=max(3.0, cfg.x))
    w = window(f, cfg.x)
    mode = cfg.params.get("g_mode", "lemma")
    tc = build_gn(seq, sc, f, model, mode=mode, strict=False)
    return dict(seq=seq, model=model, sc=sc, f=f, w=w, tc=tc, js=np.arange(w.j_a, w.j_b + 1))


def _cov_prepare(cfg, n, n_t):
    ctx = _g_context(cfg, n, n_t)
    ctx["K"] = K_of_g(ctx["tc"].g, ctx["js"]).matrix
    return ctx


def _cov_one(cfg, ctx, rep, seed):
    """sup over same-sign knot pairs of |Cov(Z | training set) - K(g_n)| for one training set."""
    sc, js = ctx["sc"], ctx["js"]
    x = sample(ctx["model"], sc.n_t, _rng(seed)).values
    th = coeff_means(x, sc.k_star + max(int(js[-1]), 0) + 1)
    C = cond_cov_Z_matrix(th, ctx["seq"], sc, js)
    same = np.multiply.outer(js, js) > 0
    err = float(np.abs(C - ctx["K"])[same].max()) if same.any() else 0.0
    scale = float(np.abs(ctx["K"]).max()) or 1.0
    return [(sc.n, sc.n_t, 0, "sup_cov_err", err), (sc.n, sc.n_t, 0, "sup_cov_err_rel", err / scale)]


def _g_static_rows(ctx) -> List[Row]:
    sc, tc, w = ctx["sc"], ctx["tc"], ctx["w"]
    rows = _scaling_rows(sc) + [(sc.n, sc.n_t, 0, "a_x", w.a), (sc.n, sc.n_t, 0, "b_x", w.b)]
    rows += [(sc.n, sc.n_t, 0, k, float(v)) for k, v in tc.checks.items()]
    rows += [(sc.n, sc.n_t, 0, f"g_hyp_{k}", float(bool(v))) for k, v in tc.hypothesis_ok.items()
             if v is not None]
    return rows


def _mean_rows(rows, stat_names, V=0):
    out = []
    for name in stat_names:
        sel = [r for r in rows if r[3] == name]
        if not sel:
            continue
        n, n_t = sel[0][0], sel[0][1]
        v = np.array([r[4] for r in sel])
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        out += [(n, n_t, V, f"mean_{name}", float(v.mean())), (n, n_t, V, f"stderr_{name}", se),
                (n, n_t, V, f"median_{name}", float(np.median(v)))]
    return out


def _cov_finish(cfg, ctx, rows):
    return _g_static_rows(ctx) + _mean_rows(rows, ["sup_cov_err", "sup_cov_err_rel"])


# -- excess-risk shape -----------------------------------------------------------

def _ers_prepare(cfg, n, n_t):
    seq, model = _model(cfg)
    sc = scaling(seq, n, n_t)
    if sc.degenerate:
        raise ConfigError([f"n_t: scaling is degenerate (Delta = 0) at n={n}, n_t={n_t}"])
    f = risk_shape(seq, sc, x_max=max(3.0, cfg.x))
    w = window(f, cfg.x)
    js = np.arange(w.j_a, w.j_b + 1)
    return dict(seq=seq, model=model, sc=sc, f=f, w=w, js=js, fj=f.at(js))


def _ers_one(cfg, ctx, rep, seed):
    """sup over window knots of |L - f_n|, L the rescaled excess risk of one training set."""
    sc, js = ctx["sc"], ctx["js"]
    x = sample(ctx["model"], sc.n_t, _rng(seed)).values
    th = coeff_means(x, sc.k_star + int(js[-1]))
    r = risk_curve(th, ctx["seq"])
    L = (r[sc.k_star + js] - r[sc.k_star]) / sc.e_frak
    return [(sc.n, sc.n_t, 0, "sup_L_minus_f", float(np.abs(L - ctx["fj"]).max()))]


def _ers_finish(cfg, ctx, rows):
    sc, w = ctx["sc"], ctx["w"]
    return (_scaling_rows(sc) + [(sc.n, sc.n_t, 0, "a_x", w.a), (sc.n, sc.n_t, 0, "b_x", w.b)]
            + _mean_rows(rows, ["sup_L_minus_f"]))


# -- law of the argmin -----------------------------------------------------------

def _am_prepare(cfg, n, n_t):
    ctx = _g_context(cfg, n, n_t)
    sc, w = ctx["sc"], ctx["w"]
    auto = max(min(n_t, 4 * sc.k_star), sc.k_star + w.j_b + 1)
    ctx["k_max"] = auto if cfg.k_max == "auto" else int(cfg.k_max)
    ctx["g_win"] = ctx["tc"].g.restrict(w.j_a, w.j_b)
    ctx["f_win"] = ctx["f"].at(ctx["js"])
    return ctx


def _am_one(cfg, ctx, rep, seed):
    """Rescaled selected index (k_hat - k*)/Delta and the argmin of f_n - W_{g_n/V} on the window."""
    sc, js = ctx["sc"], ctx["js"]
    s = sample(ctx["model"], sc.n, _rng(derive_seed(seed, 0)))
    P = psi_matrix(s.values, ctx["k_max"])
    rows = []
    for V in cfg.V:
        scheme = make_scheme(sc.n, sc.n_t, V, _rng(derive_seed(seed, 1)))
        tr, te = fold_coefficients(s, scheme, ctx["k_max"], P=P)
        k_hat = select_k(holdout_from_coeffs(tr, te).mean(axis=0))
        u = (k_hat - sc.k_star) / sc.delta
        path = simulate_path(ctx["g_win"], V, _rng(derive_seed(seed, 2, V)))
        j_sim = int(js[np.argmin(ctx["f_win"] - path.values[0])])
        rows += [(sc.n, sc.n_t, V, "khat_rescaled", u),
                 (sc.n, sc.n_t, V, "khat_in_window", float(ctx["w"].a <= u <= ctx["w"].b)),
                 (sc.n, sc.n_t, V, "sim_argmin", j_sim / sc.delta)]
    return rows


def _am_finish(cfg, ctx, rows):
    sc, w = ctx["sc"], ctx["w"]
    out = _g_static_rows(ctx)
    edges = np.concatenate([[-np.inf], (np.arange(w.j_a, w.j_b + 2) - 0.5) / sc.delta, [np.inf]])
    for V in cfg.V:
        emp = np.array([r[4] for r in rows if r[2] == V and r[3] == "khat_rescaled"])
        sim = np.array([r[4] for r in rows if r[2] == V and r[3] == "sim_argmin"])
        ks = stats.ks_2samp(emp, sim)
        out += [(sc.n, sc.n_t, V, "ks_stat", float(ks.statistic)),
                (sc.n, sc.n_t, V, "ks_pvalue", float(ks.pvalue)),
                (sc.n, sc.n_t, V, "frac_in_window",
                 float(np.mean([r[4] for r in rows if r[2] == V and r[3] == "khat_in_window"])))]
        he, _ = np.histogram(emp, edges)
        hs, _ = np.histogram(sim, edges)
        for b in range(he.size):
            out += [(sc.n, sc.n_t, V, f"hist_emp_b{b:03d}", float(he[b])),
                    (sc.n, sc.n_t, V, f"hist_sim_b{b:03d}", float(hs[b]))]
    return out


# -- lemma sweep -----------------------------------------------------------

LEMMA_KEYS = (
    "odgs_delta_ge_nt_over_nv", "odgs_E_ge_inv_nv", "odgs_e_ge_inv_nv", "odgs_e_le_E", "odgs_E_le_2or",
    "fn_increment_ge_dist", "fn_ge_abs_minus_one", "fn_slope_le_one_right", "fn_slope_ge_minus_one_left",
    "window_width", "window_mass", "g_abs_le_20f_12",
    "g_zero_at_zero", "g_slope_ge_4norm2", "g_increment_upper",
)


def draw_admissible(rng: np.random.Generator, n_range=(200, 20000), delta4=0.2, delta5=0.05,
                    max_tries: int = 10000):
    """A random (seq, n, n_t) meeting the regularity hypotheses with n - n_t in the window.

    Returns (seq, n, n_t, rejected) with the number of rejected draws.
    """
    lo, hi = math.log10(n_range[0]), math.log10(n_range[1])
    for tries in range(max_tries):
        kind = ("geometric", "polynomial", "plateau")[int(rng.integers(3))]
        if kind == "geometric":
            seq = make_family("geometric", r=float(rng.uniform(0.3, 0.95)))
        elif kind == "polynomial":
            seq = make_family("polynomial", beta=float(rng.uniform(1.1, 4.0)),
                              kappa=float(rng.uniform(0.2, 1.0)))
        else:
            seq = make_family("plateau", h=float(10 ** rng.uniform(-4, -2)), u=int(rng.integers(1, 200)))
        n = int(10 ** rng.uniform(lo, hi))
        w = nt_window(n, delta4, delta5)
        if w.empty:
            continue
        n_t = n - int(rng.integers(w.lo, w.hi + 1))
        rep = check_hypotheses(seq, n=n, n_t=n_t)
        if not all(r.holds_on_checked_range for r in rep.results.values()):
            continue
        if scaling(seq, n, n_t).degenerate:
            continue
        return seq, n, n_t, tries
    raise RuntimeError("no admissible configuration found")


def lemma_checks(seq, n: int, n_t: int, xs=(0.5, 1.0, 3.0), eps_c: float = 1.0, eps_u: float = 0.1):
    """Every exact inequality for one configuration: name -> bool (absent when not applicable)."""
    from .limit_process import EpsSpec
    sc = scaling(seq, n, n_t)
    f = risk_shape(seq, sc, x_max=max(3.0, max(xs)))
    out = dict(sc.lemma_checks())
    out.update(shape_checks(seq, sc, f))
    width, mass = True, True
    for x in xs:
        w = window(f, x)
        width &= w.b - w.a <= 2 * (1 + x) + 1e-12
        mass &= window_mass(seq, sc, w) <= 4 * (1 + x) * sc.E_script * (1 + 1e-12)
    out["window_width"], out["window_mass"] = bool(width), bool(mass)
    tc = build_gn(seq, sc, f, DensityModel.from_seq(seq), eps=EpsSpec(eps_c, eps_u), strict=False)
    out.update(tc.checks)
    out["_g_hypothesis_ok"] = all(bool(v) for v in tc.hypothesis_ok.values())
    return out, sc


def _ls_prepare(cfg, n, n_t):
    return dict()


def _ls_one(cfg, ctx, rep, seed):
    rng = _rng(seed)
    seq, n, n_t, rejected = draw_admissible(rng, (min(cfg.n), max(cfg.n)), cfg.delta4, cfg.delta5)
    chk, sc = lemma_checks(seq, n, n_t)
    rows = [(n, n_t, 0, f"viol_{k}", float(not chk[k])) for k in LEMMA_KEYS if k in chk]
    rows += [(n, n_t, 0, "g_hypothesis_ok", float(chk["_g_hypothesis_ok"])),
             (n, n_t, 0, "rejected_draws", float(rejected)),
             (n, n_t, 0, "nt_over_nv_integer", float(n_t % (n - n_t) == 0))]
    rows += _scaling_rows(sc)
    return rows


def _ls_finish(cfg, ctx, rows):
    configs = len({r[5] for r in rows}) if rows and len(rows[0]) > 5 else 0
    out = [(0, 0, 0, "configurations", float(configs))]
    for k in LEMMA_KEYS:
        v = [r[4] for r in rows if r[3] == f"viol_{k}"]
        out += [(0, 0, 0, f"count_viol_{k}", float(sum(v))), (0, 0, 0, f"checked_{k}", float(len(v)))]
    return out


# -- coupling -----------------------------------------------------------

def random_psd(rng: np.random.Generator, d: int) -> np.ndarray:
    """Random PSD matrix of random rank 1..d, scaled to unit average variance."""
    r = int(rng.integers(1, d + 1))
    A = rng.standard_normal((d, r))
    return A @ A.T / r


def _cp_prepare(cfg, n, n_t):
    return dict(d_max=int(cfg.params.get("d_max", 50)), draws=int(cfg.params.get("draws", 20000)),
                projections=int(cfg.params.get("projections", 3)))


def _cp_one(cfg, ctx, rep, seed):
    """Trace-formula W2^2 against the Monte Carlo mean of |X - Y|^2, and marginal checks.

    Marginals are checked along a few random unit directions u: the sample
    variance of u'X is compared with u'K u, whose standard error is sqrt(2/m) u'K u.
    """
    rng = _rng(seed)
    d = int(rng.integers(1, ctx["d_max"] + 1))
    KX, KY = random_psd(rng, d), random_psd(rng, d)
    m = ctx["draws"]
    c = gaussian_coupling(KX, KY, rng, n_draws=m)
    D = ((c.X - c.Y) ** 2).sum(axis=1)
    se = float(D.std(ddof=1) / math.sqrt(m))
    z = (float(D.mean()) - c.w2_sq) / se if se > 0 else 0.0
    zx, zy = [], []
    for _ in range(ctx["projections"]):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        for Z, K, acc in ((c.X, KX, zx), (c.Y, KY, zy)):
            t = float(u @ K @ u)
            v = float(((Z @ u) ** 2).mean())          # centred Gaussian: E (u'Z)^2 = u'K u
            acc.append((v - t) / (math.sqrt(2.0 / m) * t) if t > 1e-14 else 0.0)
    return [(d, 0, 0, "w2_trace", c.w2_sq), (d, 0, 0, "w2_mc", float(D.mean())), (d, 0, 0, "w2_se", se),
            (d, 0, 0, "w2_z", z), (d, 0, 0, "marg_x_zmax", float(np.max(np.abs(zx)))),
            (d, 0, 0, "marg_y_zmax", float(np.max(np.abs(zy))))]


def _cp_finish(cfg, ctx, rows):
    zs = [abs(r[4]) for r in rows if r[3] == "w2_z"]
    mx = [r[4] for r in rows if r[3] in ("marg_x_zmax", "marg_y_zmax")]
    return [(0, 0, 0, "max_abs_w2_z", float(max(zs))), (0, 0, 0, "max_marg_z", float(max(mx)))]


@dataclass(frozen=True)
class _Experiment:
    prepare: Callable
    one: Callable
    finish: Callable
    paired: bool = True        # False: one global cell, configurations drawn per replicate


EXPERIMENTS: Dict[str, _Experiment] = {
    "unbiasedness": _Experiment(_unb_prepare, _unb_one, _unb_finish),
    "variance_ratio": _Experiment(_vr_prepare, _vr_one, _vr_finish),
    "cov_match": _Experiment(_cov_prepare, _cov_one, _cov_finish),
    "excess_risk_shape": _Experiment(_ers_prepare, _ers_one, _ers_finish),
    "argmin_law": _Experiment(_am_prepare, _am_one, _am_finish),
    "lemma_sweep": _Experiment(_ls_prepare, _ls_one, _ls_finish, paired=False),
    "coupling_check": _Experiment(_cp_prepare, _cp_one, _cp_finish, paired=False),
}
_PAIRED = {k for k, e in EXPERIMENTS.items() if e.paired}


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _cells(cfg: ExperimentConfig) -> List[Tuple[int, int]]:
    return cfg.pairs() if EXPERIMENTS[cfg.experiment].paired else [(0, 0)]


def _run_chunk(args):
    cfg, n, n_t, reps = args
    exp = EXPERIMENTS[cfg.experiment]
    ctx = exp.prepare(cfg, n, n_t)
    out = []
    for rep in reps:
        seed = derive_seed(cfg.base_seed, n, n_t, rep)
        for row in exp.one(cfg, ctx, rep, seed):
            out.append(row + (rep, seed))
    return out


def resolve_workers(cfg: ExperimentConfig, workers: Optional[int] = None) -> int:
    env = os.environ.get("CVASYM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, workers if workers is not None else cfg.workers)


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> List[ExperimentRecord]:
    """All per-replicate and summary records of one experiment, sorted.

    Replicates are split into chunks that run in a process pool; every
    replicate draws from its own derived seed, so the record set does not
    depend on the worker count.
    """
    cfg.validate()
    exp = EXPERIMENTS[cfg.experiment]
    nw = resolve_workers(cfg, workers)
    fam = cfg.family if exp.paired else cfg.experiment
    records: List[ExperimentRecord] = []
    for n, n_t in _cells(cfg):
        ctx = exp.prepare(cfg, n, n_t)
        reps = list(range(cfg.replicates))
        n_chunks = min(len(reps), nw * 4) if nw > 1 else 1
        chunks = [(cfg, n, n_t, reps[i::n_chunks]) for i in range(n_chunks)]
        if nw > 1:
            with ProcessPoolExecutor(max_workers=nw) as pool:
                parts = list(pool.map(_run_chunk, chunks))
        else:
            parts = [_run_chunk(c) for c in chunks]
        rows = sorted((r for p in parts for r in p), key=lambda r: (r[5], r[3], r[2]))
        for rn, rnt, V, stat, val, rep, seed in rows:
            records.append(ExperimentRecord(cfg.experiment, fam, rn, rnt, V, rep, stat, float(val), seed))
        for rn, rnt, V, stat, val in exp.finish(cfg, ctx, rows):
            records.append(ExperimentRecord(cfg.experiment, fam, rn, rnt, V, -1, stat, float(val),
                                            int(cfg.base_seed)))
    records.sort()
    keys = [r.key() for r in records]
    if len(set(keys)) != len(keys):
        raise RuntimeError("duplicate record keys")
    return records


def records_by_stat(records, statistic: str, **match) -> List[ExperimentRecord]:
    return [r for r in records if r.statistic == statistic
            and all(getattr(r, k) == v for k, v in match.items())]


_POLY = "polynomial:beta=1.5,kappa=0.5"

DEFAULTS: Dict[str, dict] = {
    "unbiasedness": dict(experiment="unbiasedness", family=_POLY, n=[300], n_t=[250],
                         replicates=10000, params={"k_last": 10}),
    "variance_ratio": dict(experiment="variance_ratio", family=_POLY, n=[5000], n_t_rule="window",
                           V=[1, 2, 5], replicates=2000, params={"alphas": [-0.5, 0.5, 1.0]}),
    "cov_match": dict(experiment="cov_match", family=_POLY, n=[500, 2000, 8000], n_t_rule="fraction",
                      n_t_fraction=0.8, x=1.0, replicates=20),
    "excess_risk_shape": dict(experiment="excess_risk_shape", family=_POLY, n=[500, 2000, 8000],
                              n_t_rule="window", x=3.0, replicates=200),
    "argmin_law": dict(experiment="argmin_law", family=_POLY, n=[2000, 8000], n_t_rule="window",
                       V=[1, 2, 5], x=3.0, replicates=500),
    "lemma_sweep": dict(experiment="lemma_sweep", n=[200, 20000], replicates=300),
    "coupling_check": dict(experiment="coupling_check", replicates=20,
                           params={"draws": 20000, "d_max": 50}),
}


def default_config(name: str, **overrides) -> ExperimentConfig:
    if name not in DEFAULTS:
        raise ConfigError([f"experiment: unknown {name!r} (choose from {sorted(DEFAULTS)})"])
    d = dict(DEFAULTS[name])
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d)

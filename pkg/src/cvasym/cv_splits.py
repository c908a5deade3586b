"""Split schemes, the hold-out and incomplete V-fold criteria, and the rescaled processes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .grid import GridFunction
from .oracle_scaling import ScalingSummary
from .series_estimator import psi_matrix, risk_curve
from .spectral_density import CoefficientSequence, Sample


class SchemeError(ValueError):
    pass


@dataclass(frozen=True)
class SplitScheme:
    n: int
    n_t: int
    V: int
    folds: Tuple[Tuple[np.ndarray, np.ndarray], ...]   # (T_i, I_i)

    @property
    def n_v(self) -> int:
        return self.n - self.n_t


def _check_constraints(n: int, n_t: int, V: int):
    if V < 1:
        raise SchemeError("V must be >= 1")
    if not n_t <= n - 1:
        raise SchemeError(f"n_t <= n - 1 violated: n_t={n_t}, n={n}")
    if n_t < 1:
        raise SchemeError("n_t must be >= 1")
    if V * (n - n_t) > n:
        raise SchemeError(
            f"(V-1)/V*n <= n_t violated: (V-1)/V*n = {(V - 1) / V * n:.4g} > n_t = {n_t}")


def make_scheme(n: int, n_t: int, V: int, rng: np.random.Generator) -> SplitScheme:
    """V disjoint test blocks of size n - n_t cut from a random permutation."""
    _check_constraints(n, n_t, V)
    n_v = n - n_t
    perm = rng.permutation(n)
    folds = []
    for i in range(V):
        test = np.sort(perm[i * n_v:(i + 1) * n_v])
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.nonzero(mask)[0], test))
    return SplitScheme(n, n_t, V, tuple(folds))


def fold_coefficients(sample: Sample, scheme: SplitScheme, k_max: int, P=None):
    """Training and test coefficient vectors for every fold, each of shape (V, k_max+1).

    P, if given, is psi_matrix(sample.values, k_max) computed by the caller.
    """
    if P is None:
        P = psi_matrix(sample.values, k_max)
    total = P.sum(axis=0)
    tr, te = [], []
    for T, I in scheme.folds:
        s_i = P[I].sum(axis=0)
        te.append(s_i / I.size)
        tr.append((total - s_i) / T.size)
    tr, te = np.array(tr), np.array(te)
    tr[:, 0] = 1.0
    te[:, 0] = 1.0
    return tr, te


def holdout_from_coeffs(train: np.ndarray, test: np.ndarray) -> np.ndarray:
    """HO(k) for k = 0..k_max along the last axis."""
    return np.cumsum(train * (train - 2.0 * test), axis=-1)


def holdout_curve(sample: Sample, T: Sequence[int], k_max: int) -> np.ndarray:
    T = np.asarray(T, dtype=np.int64)
    mask = np.ones(len(sample), dtype=bool)
    mask[T] = False
    if T.size == 0 or not mask.any():
        raise SchemeError("T and its complement must be non-empty")
    P = psi_matrix(sample.values, k_max)
    train = P[T].mean(axis=0)
    test = P[mask].mean(axis=0)
    train[0] = test[0] = 1.0
    return holdout_from_coeffs(train, test)


def holdout_crit(sample: Sample, T: Sequence[int], k: int) -> float:
    return float(holdout_curve(sample, T, k)[k])


def cv_curve(sample: Sample, scheme: SplitScheme, k_max: int) -> np.ndarray:
    tr, te = fold_coefficients(sample, scheme, k_max)
    return holdout_from_coeffs(tr, te).mean(axis=0)


def cv_crit(sample: Sample, scheme: SplitScheme, k: int) -> float:
    return float(cv_curve(sample, scheme, k)[k])


@dataclass(frozen=True)
class Selection:
    k_hat: int
    at_boundary: bool
    argmin_set: Tuple[int, ...]


def select_k(values) -> int:
    """Smallest index attaining the minimum."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty criterion")
    if not np.all(np.isfinite(v)):
        raise ValueError("criterion contains non-finite values")
    return int(np.argmin(v))


def select_k_info(values) -> Selection:
    v = np.asarray(values, dtype=float)
    k = select_k(v)
    ties = tuple(int(i) for i in np.nonzero(v == v[k])[0])
    return Selection(k, k == v.size - 1, ties)


@dataclass(frozen=True)
class RescaledProcesses:
    ho: List[GridFunction]
    cv: GridFunction
    L: List[GridFunction]
    Z: List[GridFunction]


def rescaled_from_coeffs(train: np.ndarray, test: np.ndarray, seq: CoefficientSequence,
                         sc: ScalingSummary, j_lo: int, j_hi: int) -> RescaledProcesses:
    """Build the rescaled processes from per-fold coefficient arrays (V, k_max+1)."""
    ks = sc.k_star
    if j_lo < -ks or ks + j_hi > train.shape[1] - 1:
        raise IndexError("j range outside [-k*, k_max - k*]")
    js = np.arange(j_lo, j_hi + 1)
    e = sc.e_frak
    ho_all = holdout_from_coeffs(train, test)
    ho, L, Z = [], [], []
    for i in range(train.shape[0]):
        h = (ho_all[i, ks + js] - ho_all[i, ks]) / e
        r = risk_curve(train[i], seq)
        l = (r[ks + js] - r[ks]) / e
        ho.append(GridFunction(js, h, sc.delta, "ho"))
        L.append(GridFunction(js, l, sc.delta, "L"))
        Z.append(GridFunction(js, l - h, sc.delta, "Z"))
    cv = GridFunction(js, np.mean([h.values for h in ho], axis=0), sc.delta, "cv")
    return RescaledProcesses(ho, cv, L, Z)


def rescaled_processes(sample: Sample, scheme: SplitScheme, seq: CoefficientSequence,
                       sc: ScalingSummary, j_range: Tuple[int, int]) -> RescaledProcesses:
    j_lo, j_hi = j_range
    if j_lo > 0 or j_hi < 0:
        raise IndexError("j range must contain 0")
    tr, te = fold_coefficients(sample, scheme, sc.k_star + j_hi)
    return rescaled_from_coeffs(tr, te, seq, sc, j_lo, j_hi)

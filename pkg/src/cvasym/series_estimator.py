"""Empirical cosine coefficients, projection estimators and their L2 risk."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .spectral_density import SQRT2, TWO_PI, CoefficientSequence, Sample


@dataclass(frozen=True)
class EmpiricalCoefficients:
    theta_hat: np.ndarray   # theta_hat[0..k_max]
    n_t: int
    subset_id: Optional[int] = None

    def __post_init__(self):
        t = np.asarray(self.theta_hat, dtype=float)
        if t.size == 0 or t[0] != 1.0:
            raise ValueError("theta_hat[0] must be exactly 1")
        object.__setattr__(self, "theta_hat", t)

    @property
    def k_max(self) -> int:
        return self.theta_hat.size - 1


def psi_matrix(x: np.ndarray, k_max: int) -> np.ndarray:
    """psi_j(x_i) for j = 0..k_max, shape (len(x), k_max + 1)."""
    x = np.asarray(x, dtype=float)
    out = SQRT2 * np.cos(TWO_PI * np.outer(x, np.arange(k_max + 1)))
    out[:, 0] = 1.0
    return out


def coeff_means(x: np.ndarray, k_max: int) -> np.ndarray:
    if x.size == 0:
        raise ValueError("empty index set")
    t = psi_matrix(x, k_max).mean(axis=0)
    t[0] = 1.0
    return t


def empirical_coeffs(sample: Sample, T: Sequence[int], k_max: int,
                     subset_id: Optional[int] = None) -> EmpiricalCoefficients:
    T = np.asarray(T, dtype=np.int64)
    if T.size == 0:
        raise ValueError("T must be non-empty")
    return EmpiricalCoefficients(coeff_means(sample.values[T], k_max), int(T.size), subset_id)


def exact_excess_risk(coeffs, seq: CoefficientSequence, k: int) -> float:
    """||s_hat_k - s||^2 via Parseval, with the analytic tail."""
    th = coeffs.theta_hat if isinstance(coeffs, EmpiricalCoefficients) else np.asarray(coeffs)
    if k > th.size - 1:
        raise ValueError("k exceeds the available coefficients")
    d = th[:k + 1] - seq.theta(np.arange(k + 1))
    return float(d @ d + seq.tail_sq(k))


def risk_curve(theta_hat: np.ndarray, seq: CoefficientSequence) -> np.ndarray:
    """exact_excess_risk for every k = 0..len(theta_hat)-1."""
    k_max = theta_hat.size - 1
    ks = np.arange(k_max + 1)
    d = theta_hat - seq.theta(ks)
    return np.cumsum(d * d) + seq.tail_sq(ks)


def empirical_contrast(sample: Sample, S: Sequence[int], theta, k: int) -> float:
    """||t||^2 - 2 P_n^S t for t = sum_{j<=k} theta_j psi_j."""
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ValueError("S must be non-empty")
    th = theta.theta_hat if isinstance(theta, EmpiricalCoefficients) else np.asarray(theta, float)
    th = th[:k + 1]
    t_vals = psi_matrix(sample.values[S], k) @ th
    return float(th @ th - 2.0 * t_vals.mean())

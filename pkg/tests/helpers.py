"""Shared generators and reference implementations for the test suite."""

import math

import numpy as np

from cvasym.limit_process import check_monotone_hypothesis


def random_monotone_instance(rng, max_tries=1000):
    """Random piecewise-linear (x, g0, h_plus, eps) that satisfies the correction hypothesis.

    h_plus has slopes in [0.5, 3]; g0 follows a random fraction of each h
    increment with occasional small dips; eps is positive and grows in a few
    steps.  Draws failing the hypothesis are rejected.
    """
    for _ in range(max_tries):
        N = int(rng.integers(20, 200))
        X = float(rng.uniform(1, 5))
        x = np.concatenate([[0.0], np.sort(rng.uniform(0, X, N - 1))])
        x = np.unique(x)
        dx = np.diff(x)
        dh = rng.uniform(0.5, 3.0, dx.size) * dx
        h = np.concatenate([[0.0], np.cumsum(dh)]) + rng.normal()
        e0 = float(rng.uniform(0.02, 0.3))
        jumps = np.zeros(x.size)
        for k in rng.integers(1, x.size, int(rng.integers(0, 4))):
            jumps[k:] += float(rng.uniform(0, 1.5)) * e0
        eps = e0 + jumps
        dg = dh * rng.uniform(0, 1, dx.size)
        dips = rng.random(dx.size) < 0.15
        dg[dips] = -rng.uniform(0, 0.4, dips.sum()) * e0
        g0 = np.concatenate([[0.0], np.cumsum(dg)]) + rng.normal()
        if check_monotone_hypothesis(x, g0, h, eps):
            return x, g0, h, eps
    raise RuntimeError("no admissible instance")


def _crossing(x, y, start, level):
    """First point >= start where the linear interpolant of (x, y) reaches level (plain loop)."""
    ys = float(np.interp(start, x, y))
    if ys >= level:
        return start
    prev_x, prev_y = start, ys
    for xk, yk in zip(x, y):
        if xk <= start:
            continue
        if yk >= level:
            return prev_x + (level - prev_y) * (xk - prev_x) / (yk - prev_y)
        prev_x, prev_y = xk, yk
    return math.inf


def reference_monotone(x, g0, h, eps):
    """Straightforward transcription of the breakpoint induction; returns (breakpoints, evaluator)."""
    G = lambda t: float(np.interp(t, x, g0))
    H = lambda t: float(np.interp(t, x, h))
    E = lambda t: float(np.interp(t, x, eps))
    bps, flat = [0.0], []
    xi = 0.0
    while True:
        z1 = _crossing(x, g0, xi, G(xi) + 2 * E(xi))
        z2 = _crossing(x, eps, xi, 1.5 * E(xi))
        z = min(z1, z2)
        if z == math.inf or z > x[-1]:
            break
        flat.append(z2 <= z1)
        bps.append(z)
        xi = z
    vals = [G(0.0)]
    for i in range(1, len(bps)):
        vals.append(vals[-1] if flat[i - 1] else vals[-1] + G(bps[i]) - G(bps[i - 1]))

    def g(t):
        i = int(np.searchsorted(bps, t, side="left"))
        if i == 0:
            return vals[0]
        if i >= len(bps):
            return vals[-1]
        a, b = bps[i - 1], bps[i]
        if flat[i - 1] or H(b) == H(a):
            return vals[i - 1]
        return vals[i - 1] + (vals[i] - vals[i - 1]) * (H(t) - H(a)) / (H(b) - H(a))

    return np.array(bps), g

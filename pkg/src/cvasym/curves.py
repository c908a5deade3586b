"""Knot tables of f_n, g_n and the window ends, for plotting elsewhere."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from .grid import GridFunction
from .limit_process import build_gn, simulate_path
from .oracle_scaling import Window, risk_shape, scaling, window
from .spectral_density import DensityModel, parse_family

CURVE_HEADER = ("series", "j", "alpha", "value")


@dataclass(frozen=True)
class CurveSet:
    f: GridFunction
    g: GridFunction
    win: Window
    paths: Optional[np.ndarray] = None      # (n_paths, len(g.j)) values of W_{g/V}

    def rows(self):
        for name, gf in (("f_n", self.f), ("g_n", self.g)):
            for j, a, v in zip(gf.j, gf.alpha, gf.values):
                yield name, int(j), float(a), float(v)
        if self.paths is not None:
            for i, p in enumerate(self.paths):
                for j, a, v in zip(self.g.j, self.g.alpha, p):
                    yield f"W{i}", int(j), float(a), float(v)
        d = self.f.delta
        yield "a_x", self.win.j_a, self.win.j_a / d, self.win.x
        yield "b_x", self.win.j_b, self.win.j_b / d, self.win.x


def demo_f(alpha):
    a = np.asarray(alpha, float)
    return np.where(a <= 0, np.expm1(-np.minimum(a, 0)), 0.8 * a + (8.0 / 30.0) * a ** 3)


def demo_g(alpha):
    a = np.asarray(alpha, float)
    return 7.8 * a - 3.0 * demo_f(a) * (a < 0)


def figure_demo(x: float = 25.0, delta: int = 100, n_paths: int = 0,
                rng: Optional[np.random.Generator] = None) -> CurveSet:
    """The illustrative f and g (unit-norm-scale example with ||s||^2 = 1.2) on knots j/delta.

    The grid runs one knot past each window end so the window is interior.
    """
    lo = -math.log1p(x)
    hi = brentq(lambda a: float(demo_f(a)) - x, 0.0, 10.0 + x)
    js = np.arange(math.floor(lo * delta) - 1, math.ceil(hi * delta) + 2)
    f = GridFunction(js, demo_f(js / delta), delta, "f_n")
    g = GridFunction(js, demo_g(js / delta), delta, "g_n")
    paths = None
    if n_paths:
        paths = simulate_path(g, 1, rng if rng is not None else np.random.default_rng(0), n_paths).values
    return CurveSet(f, g, window(f, x), paths)


def family_curves(family, n: int, n_t: int, x: float, n_paths: int = 0,
                  rng: Optional[np.random.Generator] = None) -> CurveSet:
    seq = parse_family(family)
    sc = scaling(seq, n, n_t)
    f = risk_shape(seq, sc, x_max=max(3.0, x))
    tc = build_gn(seq, sc, f, DensityModel.from_seq(seq), strict=False)
    paths = None
    if n_paths:
        paths = simulate_path(tc.g, 1, rng if rng is not None else np.random.default_rng(0), n_paths).values
    return CurveSet(f, tc.g, window(f, x), paths)


def write_curves(cs: CurveSet, dest) -> None:
    """dest is a path or an open text stream."""
    if hasattr(dest, "write"):
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for name, j, a, v in cs.rows():
            w.writerow([name, j, format(a, ".17g"), format(v, ".17g")])
        return
    with open(dest, "w", newline="") as fh:
        write_curves(cs, fh)


def read_curves(path) -> List[tuple]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        return [(s, int(j), float(a), float(v)) for s, j, a, v in rd]

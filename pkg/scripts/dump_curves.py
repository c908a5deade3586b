#!/usr/bin/env python3
"""Write f_n, g_n, window ends and a few W_{g_n} paths for several families to results/curves/."""
import pathlib

import numpy as np

from cvasym.curves import family_curves, figure_demo, write_curves

ROOT = pathlib.Path(__file__).resolve().parent.parent
CASES = [
    ("polynomial_1.5", "polynomial:beta=1.5,kappa=0.5", 5000, 4321, 3.0),
    ("geometric_third", "geometric:r=1/3", 10000, 9900, 1.0),
    ("plateau_30", "plateau:h=1/900,u=30", 1000, 900, 1.0),
]


def main():
    out = ROOT / "results" / "curves"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    cs = figure_demo(25.0, 100, 3, rng)
    write_curves(cs, out / "demo.csv")
    print(f"demo: a_x = {cs.win.a:.4g}, b_x = {cs.win.b:.4g}")
    for name, fam, n, n_t, x in CASES:
        cs = family_curves(fam, n, n_t, x, 3, rng)
        write_curves(cs, out / f"{name}.csv")
        print(f"{name}: n={n} n_t={n_t} x={x} a_x = {cs.win.a:.4g}, b_x = {cs.win.b:.4g}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Violation counts of the exact inequalities over random admissible configurations.

Uses the same seed stream as the lemma_sweep experiment.  Prints the literal statements next to the provable forms, split by whether
n_t/n_v is an integer and whether the monotone-correction hypothesis holds.
"""
import argparse
from collections import defaultdict

from cvasym.mc_harness import LEMMA_KEYS, _rng, derive_seed, draw_admissible, lemma_checks
from cvasym.oracle_scaling import provable_shape_checks, risk_shape


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--configs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-min", type=int, default=200)
    ap.add_argument("--n-max", type=int, default=20000)
    args = ap.parse_args()

    # key -> group -> [violations, checked]
    tally = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    for i in range(args.configs):
        seq, n, n_t, _ = draw_admissible(_rng(derive_seed(args.seed, 0, 0, i)), (args.n_min, args.n_max))
        chk, sc = lemma_checks(seq, n, n_t)
        chk.update(provable_shape_checks(sc, risk_shape(seq, sc, x_max=3.0)))
        groups = ["all", "integer ratio" if n_t % (n - n_t) == 0 else "non-integer ratio",
                  "hypothesis ok" if chk["_g_hypothesis_ok"] else "hypothesis fails"]
        for k, v in chk.items():
            if k.startswith("_"):
                continue
            for g in groups:
                tally[k][g][0] += not v
                tally[k][g][1] += 1

    cols = ["all", "integer ratio", "non-integer ratio", "hypothesis ok", "hypothesis fails"]
    print(f"{'statement':<30}" + "".join(f"{c:>20}" for c in cols))
    order = list(LEMMA_KEYS) + sorted(k for k in tally if k not in LEMMA_KEYS)
    for k in order:
        if k not in tally:
            continue
        cells = [f"{tally[k][c][0]}/{tally[k][c][1]}" if tally[k][c][1] else "-" for c in cols]
        print(f"{k:<30}" + "".join(f"{c:>20}" for c in cells))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Run every experiment config under configs/ and print the summary statistics.

    python scripts/run_all.py                 # full settings
    python scripts/run_all.py --scale 0.05    # replicates scaled down for a quick look
"""
import argparse
import dataclasses
import pathlib
import time

from cvasym.mc_harness import emit, load_config, run_experiment

ROOT = pathlib.Path(__file__).resolve().parent.parent
SKIP = {"smoke.toml"}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--configs", default=str(ROOT / "configs"))
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--only", nargs="*", default=None, help="experiment names")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(pathlib.Path(args.configs).glob("*.toml")):
        if path.name in SKIP or "experiment" not in path.read_text():
            continue
        cfg = load_config(path)
        if args.only and cfg.experiment not in args.only:
            continue
        if args.scale != 1.0:
            cfg = dataclasses.replace(cfg, replicates=max(2, int(cfg.replicates * args.scale)))
        t0 = time.perf_counter()
        recs = run_experiment(cfg, args.workers)
        dest = out / f"{cfg.experiment}.csv"
        emit(recs, "csv", dest)
        print(f"== {cfg.experiment}: {cfg.replicates} replicates, {time.perf_counter() - t0:.1f} s -> {dest}")
        for r in recs:
            if r.replicate == -1 and not r.statistic.startswith("hist_"):
                print(f"   n={r.n:<6} n_t={r.n_t:<6} V={r.V} {r.statistic:<34} {r.value:.6g}")


if __name__ == "__main__":
    main()

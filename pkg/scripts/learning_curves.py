#!/usr/bin/env python3
"""Gaussian-teacher learning curves: theory vs finite-size simulation.

Produces plot-ready CSVs in ./out/ (or a directory given as the first
argument): the Bayes-optimal curve, both losses at their near-optimal ridge
strengths, and a lambda sweep for cross-entropy at fixed alpha.
"""

import pathlib
import sys
import time

from multiperc.cli import main as cli_main


def run(outdir: pathlib.Path):
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [
        ("bayes.csv", ["se-bayes", "--k", "3", "--teacher", "gaussian",
                       "--alpha", "0.5:8:0.5"]),
        ("xent_opt.csv", ["learning-curve", "--loss", "xent", "--lam", "0.01",
                          "--alpha-grid", "1:8:1", "--d", "500", "--seeds", "20"]),
        ("square_opt.csv", ["learning-curve", "--loss", "square", "--lam", "1.0",
                            "--alpha-grid", "1:8:1", "--d", "500", "--seeds", "20"]),
        ("xent_lambda_sweep.csv", ["learning-curve", "--loss", "xent", "--alpha", "3.0",
                                   "--lambda-grid", "1e-4:10:log:6", "--d", "500",
                                   "--seeds", "20"]),
    ]
    for name, args in jobs:
        path = outdir / name
        t0 = time.time()
        code = cli_main(args + ["--out", str(path)])
        print(f"{name}: exit={code} ({time.time() - t0:.0f}s) -> {path}")


if __name__ == "__main__":
    run(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "out"))

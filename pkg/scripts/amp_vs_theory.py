#!/usr/bin/env python3
"""Message passing on finite instances against the asymptotic prediction.

Gaussian teacher: overlap trajectories vs the fixed point at a few sample
complexities.  Rademacher teacher above the algorithmic threshold: perfect
generalization from a random start.
"""

import pathlib
import sys
import time

from multiperc.cli import main as cli_main


def run(outdir: pathlib.Path):
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [
        ("amp_gauss_a1.5.csv", ["amp", "--teacher", "gaussian", "--alpha", "1.5",
                                "--d", "2000", "--seeds", "10"]),
        ("amp_gauss_a3.csv", ["amp", "--teacher", "gaussian", "--alpha", "3.0",
                              "--d", "2000", "--seeds", "10"]),
        ("amp_rad_a3.5.csv", ["amp", "--teacher", "rademacher", "--alpha", "3.5",
                              "--d", "2000", "--seeds", "10"]),
    ]
    for name, args in jobs:
        path = outdir / name
        t0 = time.time()
        code = cli_main(args + ["--out", str(path)])
        print(f"{name}: exit={code} ({time.time() - t0:.0f}s) -> {path}")


if __name__ == "__main__":
    run(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "out"))

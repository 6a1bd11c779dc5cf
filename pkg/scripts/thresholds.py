#!/usr/bin/env python3
"""Locate the recovery thresholds for the discrete-teacher problems.

Writes JSON reports for the three-class teacher and the two-class binary
calibration into ./out/ (or a directory given as the first argument).
"""

import json
import pathlib
import sys
import time

from multiperc.cli import main as cli_main


def run(outdir: pathlib.Path):
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [
        ("k3", ["scan-transition", "--k", "3", "--teacher", "rademacher"]),
        ("k2", ["scan-transition", "--k", "2", "--teacher", "rademacher",
                "--bracket", "0.005"]),
    ]
    for tag, args in jobs:
        path = outdir / f"thresholds_{tag}.json"
        t0 = time.time()
        code = cli_main(args + ["--out", str(path)])
        rep = json.loads(path.read_text())
        print(f"{tag}: exit={code} alpha_IT={rep['alpha_it']} "
              f"alpha_algo={rep['alpha_algo']} ({time.time() - t0:.0f}s) -> {path}")


if __name__ == "__main__":
    run(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "out"))

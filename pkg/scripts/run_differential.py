#!/usr/bin/env python3
"""Differential check: detector verdicts vs exhaustive 8-bit execution.

Generates random programs over a single char-range parameter, runs the static
detector on each, sweeps all 256 inputs through the concrete interpreter, and
requires the two site sets to match exactly (plus witness replay).  This is
the same oracle the acceptance suite runs; the script exists to run it longer
or on different seeds.

Usage:
    python3 scripts/run_differential.py --programs 500 --seed 20240816
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.setrecursionlimit(100_000)
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from helpers import differential_check  # noqa: E402  (shared test oracle)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--programs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=20240816)
    args = ap.parse_args(argv)

    t0 = time.monotonic()
    total_reports, mismatches = differential_check(args.programs, args.seed)
    wall = time.monotonic() - t0
    print(f"{args.programs} programs, {total_reports} reports, "
          f"{mismatches} mismatching program(s), {wall:.1f}s")
    return 0 if mismatches == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())

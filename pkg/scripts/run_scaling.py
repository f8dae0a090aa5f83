#!/usr/bin/env python3
"""Detection-time scaling across program size classes.

Generates a few programs per size class from one master seed, runs detection
(and optionally repair) on each, and prints a class-by-class timing table.

Usage:
    python3 scripts/run_scaling.py --seed 20240816 --per-class 3
    python3 scripts/run_scaling.py --classes S 6K 11K 20K --repair
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

sys.setrecursionlimit(100_000)

from boundguard.bench import generate_corpus, run_corpus


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", nargs="+", default=["S", "6K", "11K", "20K"],
                    choices=["S", "R", "6K", "11K", "20K"])
    ap.add_argument("--per-class", type=int, default=3,
                    help="programs per size class (default 3)")
    ap.add_argument("--seed", type=int, default=20240816)
    ap.add_argument("--out", default="scaling_out")
    ap.add_argument("--repair", action="store_true",
                    help="include repair generation in the measurement")
    args = ap.parse_args(argv)

    out = Path(args.out)
    results = []
    for cls in args.classes:
        corpus_dir = out / f"corpus_{cls}"
        generate_corpus(str(corpus_dir), args.per_class, args.seed, loc_class=cls)
        metrics = run_corpus(str(corpus_dir), repair=args.repair)
        loc = metrics.loc_before / max(metrics.programs, 1)
        results.append({
            "loc_class": cls,
            "programs": metrics.programs,
            "mean_loc": round(loc),
            "tp": metrics.tp, "fp": metrics.fp, "fn": metrics.fn,
            "detect_s_median": statistics.median(metrics.detect_s),
            "detect_s_max": max(metrics.detect_s),
            "repair_s_total": sum(metrics.repair_gen_s),
        })
        row = results[-1]
        print(f"{cls:>4}  loc~{row['mean_loc']:>6}  "
              f"tp={row['tp']} fp={row['fp']} fn={row['fn']}  "
              f"detect median {row['detect_s_median']:.2f}s  "
              f"max {row['detect_s_max']:.2f}s")

    out.mkdir(parents=True, exist_ok=True)
    (out / "scaling.json").write_text(
        json.dumps(results, indent=2) + "\n", encoding="utf-8")
    print(f"results -> {out / 'scaling.json'}")
    clean = all(r["fp"] == 0 and r["fn"] == 0 for r in results)
    return 0 if clean else 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Absolute-value kernel variants: gate count and timing under a fixed gate cost."""

import argparse
from pathlib import Path

from obliqc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--width", type=int, choices=(16, 32), default=16)
    ap.add_argument("--gate-cost-us", type=float, default=20.0)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    recs = bench.sweep_abs_variants(args.samples, args.width, repetitions=args.reps,
                                    gate_cost_us=args.gate_cost_us)
    out = Path(args.out) if args.out else bench.run_dir() / "abs.csv"
    bench.report(recs, "csv", out)
    for r in recs:
        print(f"{r.variant:<12} gates={r.gates:<3} median={r.median_ns / 1e3:9.1f} us")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

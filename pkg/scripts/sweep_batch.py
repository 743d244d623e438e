"""Batch-size sweep: amortized per-item cost as SIMD lanes fill up.

    python3 scripts/sweep_batch.py --rule R1 --sizes 1,64,128,1024 --lane-cost-us 50
"""

import argparse
from pathlib import Path

from obliqc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rule", default="R1", choices=("R1", "R2", "R3"))
    ap.add_argument("--sizes", default="1,64,128,1024")
    ap.add_argument("--length", type=int, default=8)
    ap.add_argument("--gate-cost-us", type=float, default=100.0)
    ap.add_argument("--lane-cost-us", type=float, default=50.0)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    recs = bench.sweep_batch(args.rule, sizes, gate_cost_us=args.gate_cost_us,
                             lane_cost_us=args.lane_cost_us, length=args.length,
                             repetitions=args.reps)
    out = Path(args.out_dir) if args.out_dir else bench.run_dir()
    bench.report(recs, "csv", out / "phases.csv")
    bench.report(recs, "markdown", out / "phases.md")
    amort = bench.amortized_per_item(recs)
    for b in sizes:
        print(f"batch {b:>5}: {amort[b] / 1e3:10.1f} us/item")
    if 128 in amort and 1024 in amort:
        print(f"amortized(128)/amortized(1024) = {amort[128] / amort[1024]:.3f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

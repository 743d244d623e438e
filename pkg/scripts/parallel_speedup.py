"""Worker-count sweep for the parallel R3 evaluator.

The synthetic gate cost is a sleep, so threads overlap even on a single core.
At small gate costs Python dispatch overhead (serialized by the GIL) dominates
and the speedup flattens.
"""

import argparse
from pathlib import Path

from obliqc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shapes", default="16x64")
    ap.add_argument("--workers", default="1,2,4,8,16")
    ap.add_argument("--gate-cost-us", type=float, default=100.0)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    shapes = [tuple(int(d) for d in s.split("x")) for s in args.shapes.split(",")]
    workers = [int(w) for w in args.workers.split(",")]
    recs = bench.sweep_parallel(shapes, workers, args.gate_cost_us, repetitions=args.reps)
    out = Path(args.out) if args.out else bench.run_dir() / "parallel.csv"
    bench.report(recs, "csv", out)
    for r in recs:
        print(f"{r.rows}x{r.cols} workers={r.workers:<3} median={r.median_ns / 1e6:8.1f} ms "
              f"speedup={r.speedup:5.2f} cpu={r.cpu_percent:5.1f}%")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

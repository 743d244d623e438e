"""Chebyshev |x| approximation: grid error and range-rule outcome error per degree."""

import argparse
import csv
import sys

from obliqc.kernels.chebyshev import SWEEP_DEGREES, rule2_workload, sweep_degrees


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=1e-5)
    ap.add_argument("--max-degree", type=int, default=max(SWEEP_DEGREES))
    args = ap.parse_args()

    workload = rule2_workload(args.samples, args.seed)
    degrees = [d for d in SWEEP_DEGREES if d <= args.max_degree]
    w = csv.writer(sys.stdout)
    w.writerow(["degree", "max_grid_error", "outcome_error_rate"])
    chosen = None
    for a, rate in sweep_degrees(workload, degrees):
        w.writerow([a.degree, f"{a.measured_max_error:.3e}", f"{rate:.3e}"])
        if chosen is None and rate < args.target:
            chosen = a.degree
    print(f"# smallest degree under {args.target:g}: {chosen}", file=sys.stderr)


if __name__ == "__main__":
    main()

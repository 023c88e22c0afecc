#!/usr/bin/env python3
"""Run the synthetic end-to-end benchmark and print per-tile and mean metrics."""
import argparse
import dataclasses
import sys

from bldgseg.benchmark import BenchmarkConfig, check_thresholds, run_benchmark
from bldgseg.evaluation import TSV_COLUMNS


def main(argv=None):
    d = BenchmarkConfig()
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tiles", type=int, default=d.tiles)
    ap.add_argument("--held-out", type=int, default=d.held_out)
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--precision", type=int, choices=(32, 64), default=d.precision)
    ap.add_argument("--log", help="write the epoch log here")
    args = ap.parse_args(argv)
    cfg = dataclasses.replace(d, tiles=args.tiles, held_out=args.held_out, epochs=args.epochs,
                              seed=args.seed, precision=args.precision)
    log_file = open(args.log, "w") if args.log else None
    try:
        res = run_benchmark(cfg, log_file=log_file)
    finally:
        if log_file:
            log_file.close()
    print("\t".join(TSV_COLUMNS))
    for name, m in res.rows:
        print(m.row(name))
    print()
    print(res.mean.report(), end="")
    print(f"seconds={res.seconds:.1f}")
    checks = check_thresholds(res.mean)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}\t{name}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())

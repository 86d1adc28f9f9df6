"""Sampler wall time against item count (M = 1e4 .. 1e6) plus alias draw latency.

    python scripts/bench_scaling.py --out results/bench.csv
"""

import argparse
import json
import logging
from pathlib import Path

from midx.bench import bench_alias, bench_scaling, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kinds", nargs="+", default=["uni", "pop", "exact", "uniform", "popularity"])
    ap.add_argument("--items", nargs="+", type=int, default=[10**4, 10**5, 10**6])
    ap.add_argument("--codebook-size", type=int, default=16)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--rounds", type=int, default=15)
    ap.add_argument("--out", default="results/bench.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    reports = bench_scaling(args.kinds, args.items, args.codebook_size, args.dim, args.count,
                            trials=5, queries=args.rounds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(reports, args.out)
    for r in reports:
        print(f"{r.kind:>10} M={r.num_items:>8}  prepare {r.prepare_ns / 1e3:9.1f} us  "
              f"draw {r.per_draw_ns:7.1f} ns  total {r.total_ns / 1e3:9.1f} us")
    alias = bench_alias([10**2, 10**3, 10**4, 10**5, 10**6])
    print(json.dumps({"alias_draw_ns": alias}))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Baseline vs adaptive mean core usage per method and sequence.

The baseline cost model is calibrated so the initial parameters load the
core to a fixed multiple of the usage target (105% by default).
"""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from viosched.policy import PolicyConfig
from viosched.trace_io import euroc_like_trace, write_series
from viosched.workload import StressSchedule, simulate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratio", type=float, default=1.05, help="baseline usage as a multiple of chi_T")
    ap.add_argument("--stress", action="store_true", help="add the default periodic stress")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("out/cpu_effect.csv"))
    args = ap.parse_args(argv)

    target = args.ratio * PolicyConfig().chi_T
    rows = []
    print(f"{'sequence':8s} {'method':8s} {'baseline':>9s} {'adaptive':>9s} {'change':>8s} {'drop rate':>10s}")
    for seq in ("V1_02", "V2_02"):
        for method in ("smsckf", "vins", "okvis"):
            base = adapt = drop = 0.0
            t = time.perf_counter()
            for seed in range(args.seeds):
                trace = euroc_like_trace(seq, seed)
                stress = StressSchedule.periodic(duration_s=trace.duration_s) if args.stress else None
                r = simulate(trace, method, stress=stress, seed=seed, calibrate_pct=target)
                base += r.baseline_usage_mean / args.seeds
                adapt += r.adaptive_usage_mean / args.seeds
                drop += r.run_log.summary["drop_rate"] / args.seeds
            change = 100 * (adapt - base) / base
            rows.append((seq, method, base, adapt, change, drop, time.perf_counter() - t))
            print(f"{seq:8s} {method:8s} {base:9.1f} {adapt:9.1f} {change:7.1f}% {drop:10.3f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_series(args.out, ("sequence", "method", "baseline_pct", "adaptive_pct", "change_pct", "drop_rate", "seconds"), rows)
    print(f"table written to {args.out}")


if __name__ == "__main__":
    main()

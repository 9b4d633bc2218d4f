#!/usr/bin/env python3
"""Parameter and usage traces under periodic stress, one CSV per method.

Columns: t_s, phi, lambda, chi (latest sample seen by the policy), action,
stress_load.  Feed them to any plotting tool.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from viosched.trace_io import euroc_like_trace, write_series
from viosched.workload import StressSchedule, simulate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequence", default="V1_02", choices=["V1_02", "V2_02"])
    ap.add_argument("--load", type=float, default=40.0)
    ap.add_argument("--on", type=float, default=10.0, help="seconds of stress per cycle")
    ap.add_argument("--off", type=float, default=20.0, help="seconds of rest per cycle")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/stress_response"))
    args = ap.parse_args(argv)

    trace = euroc_like_trace(args.sequence, args.seed)
    stress = StressSchedule.periodic(args.load, args.on, args.off, trace.duration_s)
    args.out.mkdir(parents=True, exist_ok=True)
    print(f"{'method':8s} {'drops':>6s} {'changes':>8s} {'min phi':>8s} {'min lam':>8s} {'usage':>7s} {'conv s':>7s}")
    for method in ("vins", "smsckf", "okvis"):
        r = simulate(trace, method, stress=stress, seed=args.seed)
        recs = r.run_log.records
        t0 = recs[0].t_ns
        rows = [
            ((x.t_ns - t0) / 1e9, x.phi, x.lam, x.chi, x.action, stress.load_at((x.t_ns - t0) / 1e9))
            for x in recs
        ]
        write_series(args.out / f"{method}.csv", ("t_s", "phi", "lambda", "chi", "action", "stress_load"), rows)
        s = r.run_log.summary
        conv = "-" if r.convergence_time_s is None else f"{r.convergence_time_s:.1f}"
        print(f"{method:8s} {s['drops']:6d} {s['param_changes']:8d} {min(x.phi for x in recs):8d} "
              f"{min(x.lam for x in recs):8d} {r.adaptive_usage_mean:7.1f} {conv:>7s}")
    print(f"series written to {args.out}")


if __name__ == "__main__":
    main()

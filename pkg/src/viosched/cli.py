"""Command-line entry point.

Exit codes: 0 success, 1 policy invariant violated during a run,
2 configuration or input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from pathlib import Path

from . import cpu_monitor
from .config import ConfigError, RunConfig, build_run_config, load_config_file
from .cpu_monitor import CpuSpec, probe_cpu_spec
from .errors import TraceMismatch, VioSchedError
from .profiles import ProfileTable, classify_region, compute_initial_parameters
from .trace_io import (
    EUROC_LIKE,
    SyntheticSpec,
    euroc_like_trace,
    generate_synthetic_trace,
    load_euroc,
    read_run_log,
    summarize,
    write_run_log,
    write_series,
)
from .workload import DEFAULT_CPU, StressSchedule, inject_live_stress, replay_live, simulate

log = logging.getLogger("viosched")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--profiles", help="profile coefficient file (overrides the built-in table)")
    p.add_argument("--cpu-override", help="e.g. mu=2,nu_min=0.8,nu_max=1.7")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_flags(p: argparse.ArgumentParser):
    p.add_argument("--method", choices=["vins", "smsckf", "okvis"])
    p.add_argument("--trace", help="EuRoC sequence directory")
    p.add_argument("--synthetic", help="synthetic trace spec, e.g. duration=10,profile=constant-low; or V1_02 / V2_02")
    p.add_argument("--stress", help="stress schedule csv (start_s,end_s,load_pct) or 'default'")
    p.add_argument("--adaptive", help="true/false")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="viosched", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("probe", help="print CPU spec, region and initial parameters")
    _common(p)
    p.add_argument("--out", help="also write probe.csv into this directory")

    for name, hlp in (("simulate", "closed-loop simulation against the cost model"),
                      ("replay", "wall-clock replay against live core usage")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _run_flags(p)
        if name == "replay":
            p.add_argument("--max-duration", type=float, help="stop after this many trace seconds")

    p = sub.add_parser("stress-test", help="inject live stress and record core usage")
    _common(p)
    p.add_argument("--stress", help="stress schedule csv or 'default'")
    p.add_argument("--cores", help="comma-separated cores to stress (default: monitored cores)")
    p.add_argument("--duration", type=float, help="seconds to monitor (default: schedule end + 1)")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("compare", help="compare two run logs (baseline vs adaptive)")
    p.add_argument("log_a")
    p.add_argument("log_b")
    p.add_argument("--out", help="write compare.csv here (directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _overrides(args) -> dict:
    o = {}
    for flag, key in (("method", "run.method"), ("trace", "run.trace"), ("synthetic", "run.synthetic"),
                      ("stress", "run.stress"), ("adaptive", "run.adaptive"), ("seed", "sim.seed"),
                      ("out", "run.out"), ("profiles", "run.profiles"), ("cpu_override", "cpu.override")):
        v = getattr(args, flag, None)
        if v is not None:
            o[key] = v
    return o


def _run_config(args) -> RunConfig:
    file_vals = load_config_file(args.config) if getattr(args, "config", None) else {}
    return build_run_config(file_vals, _overrides(args))


def _table(rc: RunConfig) -> ProfileTable | None:
    return ProfileTable.load(rc.profiles) if rc.profiles else None


def _host_spec(rc: RunConfig) -> CpuSpec:
    return probe_cpu_spec(rc.cpu_override, rc.nominal_ghz)


def _sim_spec(rc: RunConfig) -> CpuSpec:
    # simulations must not depend on the machine they run on
    d = rc.cpu_override or rc.sim_cpu
    return probe_cpu_spec(d) if d else DEFAULT_CPU


def _trace(rc: RunConfig):
    if rc.trace is not None:
        return load_euroc(rc.trace)
    s = rc.synthetic or "V1_02"
    if s in EUROC_LIKE:
        return euroc_like_trace(s, rc.seed)
    return generate_synthetic_trace(SyntheticSpec.parse(s), rc.seed)


def _stress(rc: RunConfig, duration_s: float) -> StressSchedule:
    if rc.stress in (None, "none"):
        return StressSchedule()
    if rc.stress == "default":
        return StressSchedule.periodic(40.0, 10.0, 20.0, duration_s)
    return StressSchedule.from_csv(rc.stress)


# ---------------------------------------------------------------------------


def cmd_probe(args) -> int:
    rc = _run_config(args)
    table = _table(rc)
    spec = _host_spec(rc)
    region = classify_region(spec)
    rows = []
    for m in (table.methods() if table else ("vins", "smsckf", "okvis")):
        params, prof = compute_initial_parameters(spec, m, table)
        rows.append((m, params, prof))

    print(f"CPU: mu={spec.core_count} nu_min={spec.clock_min:g} GHz nu_max={spec.clock_max:g} GHz")
    print(f"Region: {region.value}")
    for m, p, prof in rows:
        online = ",".join(sorted(prof.online_fields())) or "none"
        print(f"  {prof.label or m:10s} phi={p.phi} lambda={p.lam} W={p.window} W_t={p.window_temporal} "
              f"W_kf={p.window_keyframe} grid={p.grid_rows}x{p.grid_cols} r={p.resolution[0]}x{p.resolution[1]} "
              f"online={online}")

    cols = ["method", "mu", "nu_min", "nu_max", "region", "phi", "lambda", "w", "w_t", "w_kf",
            "grid_rows", "grid_cols", "res_w", "res_h"]
    data = [
        [m, spec.core_count, spec.clock_min, spec.clock_max, region.value, p.phi, p.lam, p.window,
         p.window_temporal, p.window_keyframe, p.grid_rows, p.grid_cols, *p.resolution]
        for m, p, _ in rows
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in data:
        w.writerow(["" if v is None else v for v in r])
    print()
    print(buf.getvalue(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "probe.csv").write_text(buf.getvalue())
    return EXIT_OK


def _write_outputs(out: Path, report, stress: StressSchedule, rc: RunConfig):
    out.mkdir(parents=True, exist_ok=True)
    write_run_log(out / "runlog.csv", report.run_log)
    write_series(out / "usage.csv", ("t_s", "chi"), report.usage_series)
    recs = report.run_log.records
    t0 = recs[0].t_ns if recs else 0
    write_series(
        out / "plot_series.csv",
        ("t_s", "phi", "lambda", "chi", "action", "stress_load"),
        (((r.t_ns - t0) / 1e9, r.phi, r.lam, r.chi, r.action, stress.load_at((r.t_ns - t0) / 1e9)) for r in recs),
    )
    write_series(out / "stress.csv", ("start_s", "end_s", "load_pct"), stress.intervals)
    s = report.run_log.summary
    summary = [
        ("frames", s["frames"]),
        ("drop_rate", s["drop_rate"]),
        ("agility_drops", s["agility_drops"]),
        ("resource_drops", s["resource_drops"]),
        ("param_changes", s["param_changes"]),
        ("mean_chi_frames", s["mean_chi"]),
        ("baseline_usage_mean", report.baseline_usage_mean),
        ("adaptive_usage_mean", report.adaptive_usage_mean),
        ("convergence_time_s", report.convergence_time_s),
        ("violations", len(report.violations)),
    ]
    write_series(out / "summary.csv", ("metric", "value"), summary)
    if report.violations:
        write_series(out / "violations.csv", ("check", "frame_id", "message"), report.violations)


def cmd_simulate(args) -> int:
    rc = _run_config(args)
    table = _table(rc)
    trace = _trace(rc)
    stress = _stress(rc, trace.duration_s)
    report = simulate(
        trace, rc.method, rc.policy, rc.cost, stress, rc.adaptive, rc.seed,
        cpu=_sim_spec(rc), agility_config=rc.agility, table=table, calibrate_pct=rc.calibrate_pct,
        rate_hz=rc.monitor_rate_hz, step_phi=rc.step_phi, step_lambda=rc.step_lambda,
        extra_header={"run_config": {k: v for k, v in rc.snapshot().items() if k != "out"}},
    )
    _write_outputs(rc.out, report, stress, rc)
    s = report.run_log.summary
    print(f"{trace.name}: {s['frames']} frames, drop rate {s['drop_rate']:.3f}, "
          f"usage {report.adaptive_usage_mean:.1f}% (baseline {report.baseline_usage_mean:.1f}%)"
          if report.baseline_usage_mean is not None else f"{trace.name}: {s['frames']} frames")
    print(f"outputs in {rc.out}")
    if report.violations:
        for v in report.violations[:10]:
            print(f"VIOLATION {v.check} frame {v.frame_id}: {v.message}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_replay(args) -> int:
    rc = _run_config(args)
    table = _table(rc)
    trace = _trace(rc)
    spec = _host_spec(rc)
    core = rc.monitor_cores[0]
    report = replay_live(
        trace, rc.method, rc.policy, rc.cost, cpu=spec, core=core, agility_config=rc.agility, table=table,
        calibrate_pct=rc.calibrate_pct, rate_hz=rc.monitor_rate_hz, adaptive=rc.adaptive,
        max_duration_s=args.max_duration, seed=rc.seed,
    )
    _write_outputs(rc.out, report, StressSchedule(), rc)
    print(f"replayed {len(report.run_log.records)} frames live on core {core}; outputs in {rc.out}")
    return EXIT_VIOLATION if report.violations else EXIT_OK


def cmd_stress_test(args) -> int:
    rc = _run_config(args)
    spec = _host_spec(rc)
    if args.stress:
        rc.stress = args.stress
    sched = _stress(rc, 30.0) if rc.stress else StressSchedule(((1.0, 6.0, 50.0),))
    cores = [int(c) for c in args.cores.split(",")] if args.cores else rc.monitor_cores
    duration = args.duration or ((sched.intervals[-1][1] if sched.intervals else 0) + 1.0)
    sampler = cpu_monitor.start_usage_sampler(rc.monitor_cores, rc.monitor_rate_hz, spec=spec, aggregate=rc.aggregate)
    handle = inject_live_stress(sched, cores)
    try:
        time.sleep(duration)
    finally:
        handle.cancel()
        sampler.stop()
    samples = list(sampler.samples)
    t0 = samples[0].timestamp if samples else 0
    rows = [((s.timestamp - t0) / 1e9, s.core_id, s.usage_pct) for s in samples]
    for r in rows:
        print(f"t={r[0]:6.2f}s core {r[1]} usage {r[2]:5.1f}%")
    out = Path(args.out) if args.out else rc.out
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "stress_usage.csv", ("t_s", "core", "usage_pct"), rows)
    write_series(out / "stress.csv", ("start_s", "end_s", "load_pct"), sched.intervals)
    return EXIT_OK


COMPARE_METRICS = ("mean_chi", "drop_rate", "param_changes", "mean_phi", "mean_lambda", "frames")


def compare_logs(log_a, log_b) -> list[tuple[str, float | None, float | None, float | None]]:
    """Rows (metric, a, b, change) with change = a - b."""
    ha, hb = log_a.header.get("trace_hash"), log_b.header.get("trace_hash")
    if ha is None or ha != hb:
        raise TraceMismatch(f"logs come from different traces ({ha} vs {hb})")
    sa, sb = summarize(log_a.records), summarize(log_b.records)
    rows = []
    for m in COMPARE_METRICS:
        a, b = sa[m], sb[m]
        rows.append((m, a, b, None if a is None or b is None else a - b))
    return rows


def cmd_compare(args) -> int:
    a = read_run_log(args.log_a)
    b = read_run_log(args.log_b)
    rows = compare_logs(a, b)
    print(f"{'metric':14s} {'A':>12s} {'B':>12s} {'Change':>12s}")
    for m, x, y, d in rows:
        fmt = lambda v: "-" if v is None else f"{v:12.4f}"
        print(f"{m:14s} {fmt(x)} {fmt(y)} {fmt(d)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_series(out / "compare.csv", ("metric", "a", "b", "change"), rows)
    return EXIT_OK


COMMANDS = {
    "probe": cmd_probe,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "stress-test": cmd_stress_test,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, VioSchedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

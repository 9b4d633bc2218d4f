"""Closed-loop desk-scale simulation and live CPU stress injection.

The VIO pipeline is replaced by an affine per-frame CPU cost.  Simulated
time follows the trace timestamps, the simulated core accumulates busy
time from processed frames plus scheduled background load, and the usage
sampler differences those counters exactly as it would the host's.
"""
from __future__ import annotations

import csv
import logging
import math
import multiprocessing as mp
import os
import statistics
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import audit
from .agility import AgilityConfig, AgilityState
from .cpu_monitor import NS_PER_S, CpuSpec, UsageSampler, pin_process_to_core
from .errors import InvalidSpec, InvalidTrace, UnsupportedOnHost
from .policy import Action, AdaptationPolicy, DecisionRecord, PolicyConfig, Reason
from .profiles import ParamSet, ProfileTable, classify_region, compute_initial_parameters
from .trace_io import RunLog, SensorTrace

log = logging.getLogger(__name__)

NS_PER_MS = 1_000_000
MIN_FRAME_MS = 0.1

# dual-core 1.7 GHz laptop class
DEFAULT_CPU = CpuSpec(2, 0.8, 1.7)


@dataclass(frozen=True)
class CostModel:
    base_ms: float = 20.0
    phi_coeff: float = 0.05  # ms per feature
    lambda_coeff: float = 1.5  # ms per iteration
    window_coeff: float = 0.5  # ms per window pose
    resolution_coeff: float = 5.0  # ms per megapixel
    noise_std: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise InvalidSpec(f"cost model {k} must be finite and >= 0, got {v}")

    def variable_ms(self, params: ParamSet) -> float:
        return (
            self.phi_coeff * params.feature_count
            + self.lambda_coeff * params.lam
            + self.window_coeff * params.effective_window
            + self.resolution_coeff * params.megapixels
        )


def frame_cost(model: CostModel, params: ParamSet, noise: float = 0.0) -> float:
    """Milliseconds of CPU for one processed frame.

    ``noise`` is a standard-normal draw scaled by ``model.noise_std``.
    """
    c = model.base_ms + model.variable_ms(params) + model.noise_std * noise
    return max(MIN_FRAME_MS, c)


def calibrate(model: CostModel, params: ParamSet, frame_rate_hz: float, target_pct: float) -> CostModel:
    """Return a model whose noise-free cost at ``params`` loads one core to ``target_pct``."""
    if not (0 < target_pct and frame_rate_hz > 0):
        raise InvalidSpec("target and frame rate must be positive")
    per_frame = target_pct / 100.0 * 1000.0 / frame_rate_hz
    var = model.variable_ms(params)
    if var < per_frame:
        return replace(model, base_ms=per_frame - var)
    # parameter terms alone overshoot; shrink them to half the budget
    k = 0.5 * per_frame / var
    return replace(
        model,
        base_ms=0.5 * per_frame,
        phi_coeff=model.phi_coeff * k,
        lambda_coeff=model.lambda_coeff * k,
        window_coeff=model.window_coeff * k,
        resolution_coeff=model.resolution_coeff * k,
    )


@dataclass(frozen=True)
class StressSchedule:
    """Ordered, non-overlapping (start_s, end_s, added load %) intervals."""

    intervals: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple((float(a), float(b), float(c)) for a, b, c in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        prev_end = -math.inf
        for a, b, load in ivs:
            if not (a < b):
                raise InvalidSpec(f"stress interval [{a}, {b}) is empty or reversed")
            if a < prev_end:
                raise InvalidSpec(f"stress interval starting at {a}s overlaps or is out of order")
            if not (0 <= load <= 100):
                raise InvalidSpec(f"stress load {load} outside [0, 100]")
            prev_end = b

    @classmethod
    def periodic(cls, load_pct=40.0, on_s=10.0, off_s=20.0, duration_s=120.0, first_s=None) -> "StressSchedule":
        start = off_s if first_s is None else first_s
        ivs = []
        while start < duration_s:
            ivs.append((start, min(start + on_s, duration_s), load_pct))
            start += on_s + off_s
        return cls(tuple(iv for iv in ivs if iv[0] < iv[1]))

    @classmethod
    def from_csv(cls, path: str | Path) -> "StressSchedule":
        ivs = []
        with open(path, newline="") as f:
            for line_no, row in enumerate(csv.reader(f), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if line_no == 1 and not row[0].strip()[:1].isdigit():
                    continue  # header
                if len(row) != 3:
                    raise InvalidSpec(f"{path}:{line_no}: expected start_s,end_s,load_pct")
                try:
                    ivs.append(tuple(float(x) for x in row))
                except ValueError:
                    raise InvalidSpec(f"{path}:{line_no}: non-numeric stress row {row}") from None
        return cls(tuple(ivs))

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            f.write("start_s,end_s,load_pct\n")
            for a, b, c in self.intervals:
                f.write(f"{a!r},{b!r},{c!r}\n")

    def load_at(self, t_s: float) -> float:
        for a, b, load in self.intervals:
            if a <= t_s < b:
                return load
        return 0.0

    def background_ns(self, t0_ns: int, t1_ns: int) -> float:
        """Integral of load/100 over [t0, t1) (both relative to run start)."""
        total = 0.0
        for a, b, load in self.intervals:
            lo = max(t0_ns, a * NS_PER_S)
            hi = min(t1_ns, b * NS_PER_S)
            if hi > lo:
                total += (hi - lo) * load / 100.0
        return total


class SimCounters:
    """Cumulative busy/total time of one simulated core.

    Frames run back to back on the core: work that arrives while the core
    is still busy is queued behind it.
    """

    simulated = True

    def __init__(self, t0_ns: int, stress: StressSchedule | None = None, core_id: int = 0):
        self.t0 = t0_ns
        self.stress = stress or StressSchedule()
        self.core_id = core_id
        self.busy_until = t0_ns
        self._done_ns = 0
        self._pending: deque[tuple[int, int]] = deque()

    def add_work(self, t_ns: int, dur_ns: int):
        start = max(t_ns, self.busy_until)
        end = start + dur_ns
        self._pending.append((start, end))
        self.busy_until = end

    def work_ns(self, now_ns: int) -> int:
        while self._pending and self._pending[0][1] <= now_ns:
            a, b = self._pending.popleft()
            self._done_ns += b - a
        partial = 0
        if self._pending:
            a, _ = self._pending[0]
            partial = max(0, now_ns - a)
        return self._done_ns + partial

    def read(self, now_ns: int) -> dict[int, tuple[float, float]]:
        rel = now_ns - self.t0
        busy = self.work_ns(now_ns) + self.stress.background_ns(0, rel)
        return {self.core_id: (float(busy), float(rel))}


@dataclass
class SimReport:
    run_log: RunLog
    usage_series: list[tuple[float, float]]
    baseline_usage_mean: float | None
    adaptive_usage_mean: float | None
    convergence_time_s: float | None  # None: no stress, or not converged within the first interval
    baseline_usage_series: list[tuple[float, float]] = field(default_factory=list)
    violations: list[audit.Violation] = field(default_factory=list)
    max_queue_len: int = 0
    stress: StressSchedule = field(default_factory=StressSchedule)
    params_trace: list[ParamSet] = field(default_factory=list, repr=False)

    @property
    def usage_mean(self) -> float | None:
        return self.adaptive_usage_mean


def _mean(series):
    vals = [u for _, u in series]
    return statistics.fmean(vals) if vals else None


def _run(
    trace: SensorTrace,
    params: ParamSet,
    profile,
    config: PolicyConfig,
    agility_config: AgilityConfig,
    model: CostModel,
    stress: StressSchedule,
    adaptive: bool,
    noise: np.ndarray,
    rate_hz: float,
    keep_params: bool,
):
    frame_t = trace.frame_t.tolist()
    imu_t = trace.imu_t.tolist()
    agility = AgilityState(agility_config)
    w_mag = np.linalg.norm(trace.gyro, axis=1).tolist() if len(imu_t) else []
    a_mag = np.linalg.norm(trace.accel, axis=1)
    if agility_config.gravity_compensation:
        a_mag = np.maximum(0.0, a_mag - agility_config.gravity)
    a_mag = a_mag.tolist() if len(imu_t) else []
    imu_end = np.searchsorted(trace.imu_t, trace.frame_t, side="right").tolist()

    t0 = frame_t[0]
    counters = SimCounters(t0, stress)
    sampler = UsageSampler([0], rate_hz, core_count=1, backend=counters)
    sampler.start(now_ns=t0)
    period_ns = sampler.period_ns
    policy = AdaptationPolicy(params, profile, config, agility, usage_period_ns=period_ns)
    gate = policy.gate

    records: list[DecisionRecord] = []
    usage: list[tuple[float, float]] = []
    params_trace: list[ParamSet] = []
    max_q = 0
    i0 = 0
    cur_params = params
    cost_cache: dict[ParamSet, float] = {}
    for k, t in enumerate(frame_t):
        i1 = imu_end[k]
        if i1 > i0:
            agility.push_magnitudes(w_mag[i0:i1], a_mag[i0:i1], imu_t[i1 - 1], first_timestamp=imu_t[i0])
            i0 = i1
        for s in sampler.poll(t):
            usage.append(((s.timestamp - t0) / NS_PER_S, s.usage_pct))
        latest = sampler._latest.get(0)
        if adaptive:
            d, rec = policy.on_frame(k, t, latest)
            processed = d.action is Action.PROCESS
            cur_params = d.params_after
            if len(gate.queue) > max_q:
                max_q = len(gate.queue)
        else:
            processed = True
            w, a = agility._averages()
            chi = latest.usage_pct if latest is not None else None
            rec = DecisionRecord(
                t, k, Action.PROCESS.value, Reason.NOMINAL.value, chi,
                None if chi is None else chi - config.chi_T,
                params.phi, params.lam, params.effective_window or None, w, a,
                agility.omega_threshold, agility.accel_threshold, 0, 0,
            )
        if processed:
            base = cost_cache.get(cur_params)
            if base is None:
                base = cost_cache[cur_params] = model.base_ms + model.variable_ms(cur_params)
            ms = max(MIN_FRAME_MS, base + model.noise_std * noise[k])
            counters.add_work(t, int(round(ms * NS_PER_MS)))
        records.append(rec)
        if keep_params:
            params_trace.append(cur_params)

    # close the last sampling period after the final frame
    end = frame_t[-1] + period_ns
    for s in sampler.poll(end):
        usage.append(((s.timestamp - t0) / NS_PER_S, s.usage_pct))
    return records, usage, max_q, params_trace


def simulate(
    trace: SensorTrace,
    method: str,
    config: PolicyConfig | None = None,
    model: CostModel | None = None,
    stress: StressSchedule | None = None,
    adaptive: bool = True,
    seed: int = 0,
    *,
    cpu: CpuSpec = DEFAULT_CPU,
    agility_config: AgilityConfig | None = None,
    table: ProfileTable | None = None,
    calibrate_pct: float | None = None,
    rate_hz: float = 1.0,
    step_phi: int | None = None,
    step_lambda: int | None = None,
    with_baseline: bool = True,
    keep_params: bool = False,
    extra_header: dict | None = None,
) -> SimReport:
    """Replay ``trace`` through the cost model with or without the policy.

    With ``calibrate_pct`` the model's base cost is rescaled so the initial
    parameters load the core to that percentage at the trace frame rate.
    The report always carries baseline and adaptive usage means over the
    same sampling grid (they coincide when ``adaptive`` is False).
    """
    if trace.frame_t.size == 0:
        raise InvalidTrace("trace has no camera frames")
    if trace.frame_t.size > 1 and np.any(np.diff(trace.frame_t) <= 0):
        raise InvalidTrace("frame timestamps are not strictly increasing")
    if trace.imu_t.size > 1 and np.any(np.diff(trace.imu_t) <= 0):
        raise InvalidTrace("IMU timestamps are not strictly increasing")
    config = config or PolicyConfig()
    model = model or CostModel()
    stress = stress or StressSchedule()
    agility_config = agility_config or AgilityConfig()

    params, profile = compute_initial_parameters(cpu, method, table)
    if step_phi is not None:
        profile = replace(profile, step_phi=int(step_phi))
    if step_lambda is not None:
        profile = replace(profile, step_lambda=int(step_lambda))
    if calibrate_pct is not None:
        rate = (len(trace.frame_t) - 1) * NS_PER_S / max(1, int(trace.frame_t[-1] - trace.frame_t[0])) if len(trace.frame_t) > 1 else 20.0
        model = calibrate(model, params, rate, calibrate_pct)

    noise = np.random.default_rng(seed).standard_normal(len(trace.frame_t))
    records, usage, max_q, ptrace = _run(
        trace, params, profile, config, agility_config, model, stress, adaptive, noise, rate_hz, keep_params
    )
    if adaptive and with_baseline:
        _, base_usage, _, _ = _run(
            trace, params, profile, config, agility_config, model, stress, False, noise, rate_hz, False
        )
    elif adaptive:
        base_usage = []
    else:
        base_usage = usage

    violations = audit.audit_records(records, profile, config) if adaptive else audit.audit_baseline(records, params)
    if max_q > config.l_I:
        violations.append(audit.Violation("queue_bound", -1, f"queue reached {max_q} > l_I={config.l_I}"))

    conv = None
    if stress.intervals:
        a, b, _ = stress.intervals[0]
        for ts, u in usage:
            # a sample stamped ts covers the period ending at ts
            if a < ts <= b and u <= config.chi_T:
                conv = ts - a
                break

    header = {
        "method": profile.method,
        "adaptive": adaptive,
        "seed": seed,
        "cpu_spec": cpu.as_dict(),
        "region": classify_region(cpu).value,
        "profile_hash": (table.digest if table else None) or _default_digest(),
        "trace_name": trace.name,
        "trace_hash": trace.digest(),
        "policy": asdict(config),
        "agility": asdict(agility_config),
        "cost_model": asdict(model),
        "stress": [list(iv) for iv in stress.intervals],
        "monitor_rate_hz": rate_hz,
        "initial_params": _params_dict(params),
        "profile": {
            "phi_online": profile.phi_online,
            "lambda_online": profile.lambda_online,
            "bounds": list(profile.bounds),
        },
    }
    if extra_header:
        header.update(extra_header)
    run_log = RunLog(header, records)
    return SimReport(
        run_log=run_log,
        usage_series=usage,
        baseline_usage_mean=_mean(base_usage),
        adaptive_usage_mean=_mean(usage),
        convergence_time_s=conv,
        baseline_usage_series=list(base_usage),
        violations=violations,
        max_queue_len=max_q,
        stress=stress,
        params_trace=ptrace,
    )


def _params_dict(p: ParamSet) -> dict:
    d = asdict(p)
    d["resolution"] = list(p.resolution)
    return d


def _default_digest() -> str:
    from .profiles import default_table

    return default_table().digest


# ---------------------------------------------------------------------------
# live stress


def _burn(core: int | None, intervals, t0: float, stop, slice_s: float = 0.05):
    if core is not None and hasattr(os, "sched_setaffinity"):
        try:
            os.sched_setaffinity(0, {core})
        except OSError:
            pass
    last_end = intervals[-1][1] if intervals else 0.0
    while not stop.is_set():
        t = time.monotonic() - t0
        if t >= last_end:
            return
        load = 0.0
        for a, b, l in intervals:
            if a <= t < b:
                load = l
                break
        start = time.monotonic()
        busy = slice_s * load / 100.0
        while time.monotonic() - start < busy:
            pass
        rest = slice_s - (time.monotonic() - start)
        if rest > 0:
            stop.wait(rest)


class StressHandle:
    def __init__(self, procs, stop):
        self._procs = procs
        self._stop = stop

    @property
    def alive(self) -> bool:
        return any(p.is_alive() for p in self._procs)

    def cancel(self):
        if self._stop is not None:
            self._stop.set()
        self.join(timeout=2.0)
        for p in self._procs:
            if p.is_alive():
                p.terminate()

    def join(self, timeout: float | None = None):
        for p in self._procs:
            p.join(timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.cancel()


def inject_live_stress(schedule: StressSchedule, cores, *, mode: str = "live") -> StressHandle:
    """Spawn one duty-cycled busy-spin process per core following ``schedule``.

    Interval times are seconds from the call.  Cancel with
    :meth:`StressHandle.cancel`.
    """
    if mode != "live":
        raise UnsupportedOnHost("live stress injection is unavailable in simulation mode")
    cores = sorted(set(cores))
    if not schedule.intervals or not cores:
        return StressHandle([], None)
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    stop = ctx.Event()
    t0 = time.monotonic()
    procs = []
    for c in cores:
        p = ctx.Process(target=_burn, args=(c, schedule.intervals, t0, stop), daemon=True)
        p.start()
        procs.append(p)
    return StressHandle(procs, stop)


def _spin(ms: float):
    end = time.perf_counter() + ms / 1000.0
    while time.perf_counter() < end:
        pass


def replay_live(
    trace: SensorTrace,
    method: str,
    config: PolicyConfig | None = None,
    model: CostModel | None = None,
    *,
    cpu: CpuSpec,
    core: int = 0,
    agility_config: AgilityConfig | None = None,
    table: ProfileTable | None = None,
    calibrate_pct: float | None = None,
    rate_hz: float = 1.0,
    adaptive: bool = True,
    max_duration_s: float | None = None,
    seed: int = 0,
) -> SimReport:
    """Replay ``trace`` in wall-clock time against the host's real counters.

    Each processed frame busy-spins for its modelled cost on ``core``; the
    policy reads the live usage sampler.  Not deterministic.
    """
    if trace.frame_t.size == 0:
        raise InvalidTrace("trace has no camera frames")
    config = config or PolicyConfig()
    model = model or CostModel()
    agility_config = agility_config or AgilityConfig()
    params, profile = compute_initial_parameters(cpu, method, table)
    if calibrate_pct is not None:
        model = calibrate(model, params, 20.0, calibrate_pct)
    pin_process_to_core(core, spec=cpu)
    noise = np.random.default_rng(seed).standard_normal(len(trace.frame_t))

    agility = AgilityState(agility_config)
    sampler = UsageSampler([core], rate_hz, core_count=cpu.core_count)
    policy = AdaptationPolicy(params, profile, config, agility, usage_period_ns=sampler.period_ns)
    imu_end = np.searchsorted(trace.imu_t, trace.frame_t, side="right")
    imu = trace.imu_samples()
    frame_t = trace.frame_t.tolist()
    records: list[DecisionRecord] = []
    wall0 = time.monotonic_ns()
    sampler.start(now_ns=time.time_ns(), threaded=True)
    i0 = 0
    try:
        for k, t in enumerate(frame_t):
            offset = t - frame_t[0]
            if max_duration_s is not None and offset > max_duration_s * NS_PER_S:
                break
            delay = (wall0 + offset - time.monotonic_ns()) / NS_PER_S
            if delay > 0:
                time.sleep(delay)
            for s in imu[i0:imu_end[k]]:
                agility.push_imu(s)
            i0 = max(i0, int(imu_end[k]))
            latest = sampler.latest(core)
            if adaptive:
                d, rec = policy.on_frame(k, time.time_ns(), latest)
                if d.action is Action.PROCESS:
                    _spin(frame_cost(model, d.params_after, float(noise[k])))
            else:
                w, a = agility._averages()
                chi = latest.usage_pct if latest is not None else None
                rec = DecisionRecord(
                    time.time_ns(), k, "Process", "Nominal", chi,
                    None if chi is None else chi - config.chi_T,
                    params.phi, params.lam, params.effective_window or None, w, a,
                    agility.omega_threshold, agility.accel_threshold, 0, 0,
                )
                _spin(frame_cost(model, params, float(noise[k])))
            records.append(rec)
    finally:
        sampler.stop()
    samples = [s for s in sampler.samples if s.core_id == core]
    t_first = samples[0].timestamp if samples else 0
    usage = [((s.timestamp - t_first) / NS_PER_S, s.usage_pct) for s in samples]
    violations = audit.audit_records(records, profile, config) if adaptive else audit.audit_baseline(records, params)
    header = {
        "method": profile.method, "adaptive": adaptive, "seed": seed, "mode": "live",
        "cpu_spec": cpu.as_dict(), "region": classify_region(cpu).value,
        "profile_hash": (table.digest if table else None) or _default_digest(),
        "trace_name": trace.name, "trace_hash": trace.digest(), "policy": asdict(config),
        "agility": asdict(agility_config), "cost_model": asdict(model), "monitor_rate_hz": rate_hz,
        "initial_params": _params_dict(params),
    }
    m = _mean(usage)
    return SimReport(RunLog(header, records), usage, m if not adaptive else None, m, None, violations=violations)

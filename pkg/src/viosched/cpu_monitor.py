"""CPU specification probing, per-core usage sampling and core pinning.

Usage is always derived the same way: two snapshots of cumulative
(busy, total) time per core are differenced.  The live backend reads the
host's counters through psutil; the simulated backend is fed by the
workload simulator, which makes sampling deterministic.
"""
from __future__ import annotations

import logging
import os
import re
import statistics
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol

import psutil

from .errors import (
    AffinityUnsupported,
    InvalidCoreId,
    InvalidSpec,
    SamplerAlreadyRunning,
    UnreadableSystemInfo,
)

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class CpuSpec:
    """Static processor description. Clocks are in GHz."""

    core_count: int
    clock_min: float
    clock_max: float

    def __post_init__(self):
        if not isinstance(self.core_count, int) or self.core_count < 1:
            raise InvalidSpec(f"core_count must be a positive integer, got {self.core_count!r}")
        if not (0 < self.clock_min <= self.clock_max):
            raise InvalidSpec(
                f"need 0 < clock_min <= clock_max, got {self.clock_min}..{self.clock_max} GHz"
            )

    def as_dict(self) -> dict:
        return {"mu": self.core_count, "nu_min": self.clock_min, "nu_max": self.clock_max}


@dataclass(frozen=True, slots=True)
class UsageSample:
    timestamp: int  # ns since epoch (or since simulation start)
    core_id: int  # -1 for an aggregate over several cores
    usage_pct: float


def _read_cpuinfo_mhz(path="/proc/cpuinfo") -> float | None:
    try:
        with open(path) as f:
            text = f.read()
    except OSError:
        return None
    vals = [float(m) for m in re.findall(r"^cpu MHz\s*:\s*([0-9.]+)", text, re.M)]
    return max(vals) if vals else None


def probe_cpu_spec(
    override: Mapping[str, float] | None = None, nominal_ghz: float | None = None
) -> CpuSpec:
    """Return the CPU spec, preferring ``override`` (keys mu, nu_min, nu_max).

    Live probing takes the logical core count and the min/max clock from the
    OS.  When the clock range is not exposed (common in VMs and containers)
    both ends fall back to ``nominal_ghz`` or, failing that, the current
    reported clock.
    """
    if override:
        missing = {"mu", "nu_min", "nu_max"} - set(override)
        if missing:
            raise InvalidSpec(f"cpu override missing {sorted(missing)}")
        try:
            return CpuSpec(int(override["mu"]), float(override["nu_min"]), float(override["nu_max"]))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"bad cpu override {dict(override)!r}: {exc}") from exc

    cores = psutil.cpu_count(logical=True) or os.cpu_count()
    if not cores:
        raise UnreadableSystemInfo("cannot determine core count")
    lo = hi = None
    try:
        freq = psutil.cpu_freq()
    except Exception:  # psutil raises assorted errors on exotic hosts
        freq = None
    if freq is not None and freq.max and freq.max > 0:
        hi = freq.max / 1000.0
        lo = (freq.min / 1000.0) if freq.min and freq.min > 0 else hi
    if hi is None:
        if nominal_ghz is not None:
            lo = hi = float(nominal_ghz)
        else:
            mhz = (freq.current if freq is not None and freq.current else None) or _read_cpuinfo_mhz()
            if not mhz:
                raise UnreadableSystemInfo("clock speed unavailable and no nominal frequency configured")
            lo = hi = mhz / 1000.0
        log.info("clock range not exposed by host; using nominal %.3f GHz", hi)
    return CpuSpec(int(cores), lo, hi)


# ---------------------------------------------------------------------------
# counter backends


class CounterBackend(Protocol):
    simulated: bool

    def read(self, now_ns: int) -> dict[int, tuple[float, float]]:
        """Cumulative (busy_ns, total_ns) per core as of ``now_ns``."""


class LiveCounters:
    """Per-core time accounting from the host kernel."""

    simulated = False

    def read(self, now_ns: int) -> dict[int, tuple[float, float]]:
        out = {}
        for i, t in enumerate(psutil.cpu_times(percpu=True)):
            total = sum(t)
            # guest time is already folded into user on Linux
            total -= getattr(t, "guest", 0.0) + getattr(t, "guest_nice", 0.0)
            idle = t.idle + getattr(t, "iowait", 0.0)
            out[i] = ((total - idle) * NS_PER_S, total * NS_PER_S)
        return out


def usage_from_counters(prev: tuple[float, float], cur: tuple[float, float]) -> float:
    busy = cur[0] - prev[0]
    total = cur[1] - prev[1]
    if total <= 0:
        return 0.0
    return min(100.0, max(0.0, 100.0 * busy / total))


def aggregate_usage(samples: Iterable[UsageSample], how: str = "mean") -> UsageSample:
    """Combine per-core samples into one signal (for multi-core methods)."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to aggregate")
    if len(samples) == 1:
        return samples[0]
    vals = [s.usage_pct for s in samples]
    if how == "mean":
        v = statistics.fmean(vals)
    elif how == "max":
        v = max(vals)
    elif how == "sum":
        v = sum(vals)
    else:
        raise ValueError(f"unknown aggregate {how!r}")
    return UsageSample(max(s.timestamp for s in samples), -1, v)


# ---------------------------------------------------------------------------
# sampler


class UsageSampler:
    """Emits one UsageSample per monitored core per period.

    In simulated mode the owner calls :meth:`poll` with the simulated clock
    and samples land exactly on period boundaries.  In live mode
    :meth:`start` spawns a daemon thread that polls on an absolute schedule.
    The most recent samples are published by reference swap, so readers
    never block the sampler.
    """

    def __init__(
        self,
        core_ids: Iterable[int],
        rate_hz: float = 1.0,
        *,
        core_count: int,
        backend: CounterBackend | None = None,
        clock: Callable[[], int] = time.time_ns,
        history: int | None = None,
        aggregate: str = "mean",
    ):
        core_ids = sorted(set(core_ids))
        if not core_ids:
            raise InvalidCoreId("no cores to monitor")
        for c in core_ids:
            if not (0 <= c < core_count):
                raise InvalidCoreId(f"core {c} outside 0..{core_count - 1}")
        if not rate_hz > 0:
            raise InvalidSpec(f"rate_hz must be positive, got {rate_hz}")
        self.core_ids = core_ids
        self.rate_hz = float(rate_hz)
        self.period_ns = int(round(NS_PER_S / self.rate_hz))
        self.backend = backend if backend is not None else LiveCounters()
        self.clock = clock
        self.aggregate = aggregate
        self.samples: deque[UsageSample] = deque(maxlen=history)
        self._latest: dict[int, UsageSample] = {}
        self._prev: dict[int, tuple[float, float]] | None = None
        self._next_due: int | None = None
        self._last_ts: int | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self.running = False

    def start(self, now_ns: int | None = None, threaded: bool | None = None) -> "UsageSampler":
        if self.running:
            raise SamplerAlreadyRunning("sampler already started")
        now = self.clock() if now_ns is None else now_ns
        self._prev = self._read(now)
        self._next_due = now + self.period_ns
        self.running = True
        if threaded is None:
            threaded = not self.backend.simulated
        if threaded:
            self._stop.clear()
            self._thread = threading.Thread(target=self._run, name="usage-sampler", daemon=True)
            self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2 * self.period_ns / NS_PER_S + 1)
            self._thread = None
        self.running = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    def _read(self, t: int) -> dict[int, tuple[float, float]]:
        counters = self.backend.read(t)
        try:
            return {c: counters[c] for c in self.core_ids}
        except KeyError as exc:
            raise InvalidCoreId(f"backend exposes no counters for core {exc.args[0]}") from None

    def _emit(self, t: int, cur: dict[int, tuple[float, float]]) -> list[UsageSample]:
        if self._last_ts is not None and t <= self._last_ts:
            t = self._last_ts + 1
        out = [UsageSample(t, c, usage_from_counters(self._prev[c], cur[c])) for c in self.core_ids]
        self._prev = cur
        self._last_ts = t
        self.samples.extend(out)
        self._latest = {s.core_id: s for s in out}
        return out

    def poll(self, now_ns: int) -> list[UsageSample]:
        """Emit every sample that has fallen due by ``now_ns``."""
        if not self.running:
            raise RuntimeError("sampler not started")
        out: list[UsageSample] = []
        if self.backend.simulated:
            while now_ns >= self._next_due:
                due = self._next_due
                out.extend(self._emit(due, self._read(due)))
                self._next_due = due + self.period_ns
        elif now_ns >= self._next_due:
            out.extend(self._emit(now_ns, self._read(now_ns)))
            while self._next_due <= now_ns:
                self._next_due += self.period_ns
        return out

    def _run(self):
        while not self._stop.is_set():
            wait = (self._next_due - self.clock()) / NS_PER_S
            if wait > 0 and self._stop.wait(wait):
                break
            try:
                self.poll(self.clock())
            except Exception:  # keep sampling; a transient read failure is not fatal
                log.exception("usage sampling failed")

    def latest(self, core_id: int | None = None) -> UsageSample | None:
        """Most recent sample for ``core_id``, or the aggregate over all cores."""
        snap = self._latest
        if not snap:
            return None
        if core_id is not None:
            return snap.get(core_id)
        return aggregate_usage(snap.values(), self.aggregate)


def start_usage_sampler(
    core_ids: Iterable[int],
    rate_hz: float = 1.0,
    *,
    spec: CpuSpec,
    backend: CounterBackend | None = None,
    **kwargs,
) -> UsageSampler:
    sampler = UsageSampler(core_ids, rate_hz, core_count=spec.core_count, backend=backend, **kwargs)
    return sampler.start()


def pin_process_to_core(
    core_id: int, *, spec: CpuSpec, simulate: bool = False, run_log: list | None = None
) -> bool:
    """Restrict the calling process to one core.

    Returns False (and logs) when the host offers no affinity control; that
    is reported but not treated as fatal.  In simulation mode only the
    intent is recorded.
    """
    if not (0 <= core_id < spec.core_count):
        raise InvalidCoreId(f"core {core_id} outside 0..{spec.core_count - 1}")
    if simulate:
        if run_log is not None:
            run_log.append(("pin", core_id, "simulated"))
        log.info("simulation mode: pin to core %d recorded", core_id)
        return True
    try:
        if not hasattr(os, "sched_setaffinity"):
            raise AffinityUnsupported("no sched_setaffinity on this platform")
        try:
            os.sched_setaffinity(0, {core_id})
        except OSError as exc:
            raise AffinityUnsupported(str(exc)) from exc
    except AffinityUnsupported as exc:
        log.warning("could not pin to core %d: %s", core_id, exc)
        if run_log is not None:
            run_log.append(("pin", core_id, f"unsupported: {exc}"))
        return False
    if run_log is not None:
        run_log.append(("pin", core_id, "ok"))
    return True


def process_usage(pids: Iterable[int], interval: float = 0.1) -> dict[int, float]:
    """Per-process CPU percent; recorded for the log only, never fed to the policy."""
    procs = []
    for pid in pids:
        try:
            p = psutil.Process(pid)
            p.cpu_percent(None)
            procs.append(p)
        except psutil.Error:
            continue
    time.sleep(interval)
    out = {}
    for p in procs:
        try:
            out[p.pid] = p.cpu_percent(None)
        except psutil.Error:
            pass
    return out

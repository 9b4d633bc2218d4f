"""EuRoC/ASL sensor traces, synthetic traces, and run-log persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .agility import ImuSample
from .errors import InvalidSpec, MalformedRow, NonMonotonicTimestamp, SchemaMismatch
from .policy import LOG_COLUMNS, DecisionRecord

NS_PER_S = 1_000_000_000


@dataclass(frozen=True, slots=True)
class FrameEvent:
    timestamp: int  # ns
    frame_id: int


def _data_rows(path: Path, arity: int):
    """Yield (line_no, fields) for the data rows of an ASL csv."""
    with open(path, newline="") as f:
        header_seen = False
        for line_no, line in enumerate(f, start=1):
            s = line.strip()
            if not s:
                continue
            if not header_seen:
                header_seen = True
                if s.startswith("#") or not s[0].isdigit():
                    continue
            if s.startswith("#"):
                continue
            fields = [x.strip() for x in s.split(",")]
            if len(fields) != arity:
                raise MalformedRow(path, line_no, f"expected {arity} fields, got {len(fields)}")
            yield line_no, fields


def _check_order(path, line_no, t, prev):
    if prev is not None and t <= prev:
        raise NonMonotonicTimestamp(f"{path}:{line_no}: timestamp {t} does not exceed previous {prev}", line=line_no)


def parse_imu_csv(path: str | Path) -> list[ImuSample]:
    """Rows ``timestamp_ns, w_x, w_y, w_z, a_x, a_y, a_z`` after one header line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out: list[ImuSample] = []
    prev = None
    for line_no, fields in _data_rows(path, 7):
        try:
            t = int(fields[0])
            vals = [float(x) for x in fields[1:]]
        except ValueError as exc:
            raise MalformedRow(path, line_no, str(exc)) from None
        if not all(map(math.isfinite, vals)):
            raise MalformedRow(path, line_no, "non-finite value")
        _check_order(path, line_no, t, prev)
        prev = t
        out.append(ImuSample(t, tuple(vals[:3]), tuple(vals[3:])))
    return out


def parse_cam_timestamps(path: str | Path) -> list[FrameEvent]:
    """Rows ``timestamp_ns, filename``; filenames are ignored."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out: list[FrameEvent] = []
    prev = None
    for line_no, fields in _data_rows(path, 2):
        try:
            t = int(fields[0])
        except ValueError as exc:
            raise MalformedRow(path, line_no, str(exc)) from None
        _check_order(path, line_no, t, prev)
        prev = t
        out.append(FrameEvent(t, len(out)))
    return out


@dataclass
class SensorTrace:
    """IMU and camera timing, stored as arrays for fast replay."""

    imu_t: np.ndarray  # int64 ns, shape (N,)
    gyro: np.ndarray  # (N, 3) rad/s
    accel: np.ndarray  # (N, 3) m/s^2
    frame_t: np.ndarray  # int64 ns, shape (M,)
    name: str = "trace"

    @classmethod
    def from_samples(cls, imu: Sequence[ImuSample], frames: Sequence[FrameEvent], name="trace") -> "SensorTrace":
        imu_t = np.array([s.timestamp for s in imu], dtype=np.int64)
        gyro = np.array([s.angular_velocity for s in imu], dtype=float).reshape(-1, 3)
        accel = np.array([s.linear_acceleration for s in imu], dtype=float).reshape(-1, 3)
        frame_t = np.array([f.timestamp for f in frames], dtype=np.int64)
        return cls(imu_t, gyro, accel, frame_t, name)

    def imu_samples(self) -> list[ImuSample]:
        return [
            ImuSample(int(t), tuple(map(float, w)), tuple(map(float, a)))
            for t, w, a in zip(self.imu_t, self.gyro, self.accel)
        ]

    def frames(self) -> list[FrameEvent]:
        return [FrameEvent(int(t), i) for i, t in enumerate(self.frame_t)]

    @property
    def duration_s(self) -> float:
        ts = [a for a in (self.imu_t, self.frame_t) if len(a)]
        if not ts:
            return 0.0
        return (max(int(a[-1]) for a in ts) - min(int(a[0]) for a in ts)) / NS_PER_S

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.imu_t, self.gyro, self.accel, self.frame_t):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def load_euroc(seq_dir: str | Path) -> SensorTrace:
    """Load ``<seq>/mav0/{imu0,cam0}/data.csv`` (``mav0`` may be omitted)."""
    seq_dir = Path(seq_dir)
    root = seq_dir / "mav0" if (seq_dir / "mav0").is_dir() else seq_dir
    imu = parse_imu_csv(root / "imu0" / "data.csv")
    frames = parse_cam_timestamps(root / "cam0" / "data.csv")
    return SensorTrace.from_samples(imu, frames, name=seq_dir.name)


def measured_rate_hz(timestamps: Sequence[int]) -> float:
    if len(timestamps) < 2:
        return 0.0
    return (len(timestamps) - 1) * NS_PER_S / (int(timestamps[-1]) - int(timestamps[0]))


# ---------------------------------------------------------------------------
# synthetic traces

MOTION_PROFILES = ("constant-low", "constant-high", "constant", "sinusoid", "piecewise", "random")


@dataclass(frozen=True)
class SyntheticSpec:
    duration_s: float = 60.0
    imu_rate_hz: float = 200.0
    frame_rate_hz: float = 20.0
    profile: str = "sinusoid"
    omega: float = 0.15  # rad/s, level or mean
    accel: float = 0.25  # m/s^2, level or mean (gravity excluded)
    amplitude: float = 0.6  # relative swing for sinusoid / piecewise
    period_s: float = 8.0
    noise: float = 0.02
    gravity: float = 9.81
    start_ns: int = 0

    def __post_init__(self):
        if not (self.duration_s > 0 and self.imu_rate_hz > 0 and self.frame_rate_hz > 0):
            raise InvalidSpec("duration and rates must be positive")
        if self.profile not in MOTION_PROFILES:
            raise InvalidSpec(f"unknown motion profile {self.profile!r}; choose from {MOTION_PROFILES}")
        if self.period_s <= 0 or self.noise < 0:
            raise InvalidSpec("period must be positive and noise non-negative")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parse ``key=value,...`` (e.g. ``duration=10,profile=constant-low``)."""
        aliases = {"duration": "duration_s", "imu_rate": "imu_rate_hz", "frame_rate": "frame_rate_hz", "period": "period_s"}
        kw: dict[str, Any] = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in part:
                raise InvalidSpec(f"bad synthetic spec item {part!r}")
            k, v = (x.strip() for x in part.split("=", 1))
            k = aliases.get(k, k)
            if k not in cls.__dataclass_fields__:
                raise InvalidSpec(f"unknown synthetic spec key {k!r}")
            kw[k] = v if k == "profile" else (int(v) if k == "start_ns" else float(v))
        return cls(**kw)


def _unit_vectors(rng, n, smooth=400):
    # slowly wandering directions so magnitudes stay exact
    raw = rng.normal(size=(n // smooth + 2, 3))
    idx = np.arange(n) / smooth
    i0 = idx.astype(int)
    fr = (idx - i0)[:, None]
    v = raw[i0] * (1 - fr) + raw[i0 + 1] * fr
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _levels(spec: SyntheticSpec, t: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    p = spec.profile
    if p == "constant-low":
        w = np.full_like(t, 0.05)
        a = np.full_like(t, 0.05)
    elif p == "constant-high":
        w = np.full_like(t, 1.5)
        a = np.full_like(t, 2.0)
    elif p == "constant":
        w = np.full_like(t, spec.omega)
        a = np.full_like(t, spec.accel)
    elif p == "sinusoid":
        s = np.sin(2 * np.pi * t / spec.period_s)
        w = spec.omega * (1 + spec.amplitude * s)
        a = spec.accel * (1 + spec.amplitude * s)
    elif p == "piecewise":
        seg = (t // spec.period_s).astype(int) % 2
        f = np.where(seg == 0, 1 - spec.amplitude, 1 + spec.amplitude)
        w, a = spec.omega * f, spec.accel * f
    else:  # random: piecewise-constant levels drawn per period
        nseg = int(t[-1] // spec.period_s) + 1 if len(t) else 1
        fw = rng.uniform(1 - spec.amplitude, 1 + spec.amplitude * 3, size=nseg)
        fa = rng.uniform(1 - spec.amplitude, 1 + spec.amplitude * 3, size=nseg)
        seg = (t // spec.period_s).astype(int)
        w, a = spec.omega * fw[seg], spec.accel * fa[seg]
    return np.maximum(w, 0.0), np.maximum(a, 0.0)


def generate_synthetic_trace(spec: SyntheticSpec, seed: int = 0) -> SensorTrace:
    """Deterministic IMU + frame timing with prescribed motion magnitudes.

    Timestamps sit on exact rate grids.  The specific acceleration is
    ``(g + m) * u`` for a slowly rotating unit vector ``u``, so the
    gravity-compensated norm equals the requested motion level ``m`` plus
    noise.
    """
    rng = np.random.default_rng(seed)
    n_imu = int(round(spec.duration_s * spec.imu_rate_hz))
    n_cam = int(round(spec.duration_s * spec.frame_rate_hz))
    imu_step = NS_PER_S / spec.imu_rate_hz
    cam_step = NS_PER_S / spec.frame_rate_hz
    imu_t = spec.start_ns + np.round(np.arange(1, n_imu + 1) * imu_step).astype(np.int64)
    frame_t = spec.start_ns + np.round(np.arange(1, n_cam + 1) * cam_step).astype(np.int64)

    t = (imu_t - spec.start_ns) / NS_PER_S
    w_lvl, a_lvl = _levels(spec, t, rng)
    w_mag = np.abs(w_lvl + spec.noise * rng.normal(size=n_imu))
    a_mag = np.maximum(a_lvl + spec.noise * rng.normal(size=n_imu), -spec.gravity * 0.5)
    gyro = _unit_vectors(rng, n_imu) * w_mag[:, None]
    accel = _unit_vectors(rng, n_imu) * (spec.gravity + a_mag)[:, None]
    return SensorTrace(imu_t, gyro, accel, frame_t, name=f"synthetic-{spec.profile}-{seed}")


# approximate lengths of the two EuRoC sequences used for stress plots
EUROC_LIKE = {
    "V1_02": SyntheticSpec(duration_s=85.0, profile="sinusoid", omega=0.45, accel=0.45, amplitude=0.6, period_s=9.0),
    "V2_02": SyntheticSpec(duration_s=115.0, profile="sinusoid", omega=0.55, accel=0.5, amplitude=0.7, period_s=7.0),
}


def euroc_like_trace(name: str, seed: int = 0) -> SensorTrace:
    tr = generate_synthetic_trace(EUROC_LIKE[name], seed)
    tr.name = f"{name}-synthetic-{seed}"
    return tr


def write_asl(trace: SensorTrace, seq_dir: str | Path):
    """Write a trace in EuRoC ASL layout (cam filenames are placeholders)."""
    root = Path(seq_dir) / "mav0"
    (root / "imu0").mkdir(parents=True, exist_ok=True)
    (root / "cam0").mkdir(parents=True, exist_ok=True)
    with open(root / "imu0" / "data.csv", "w", newline="") as f:
        f.write("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
                "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n")
        for t, w, a in zip(trace.imu_t, trace.gyro, trace.accel):
            f.write(f"{int(t)}," + ",".join(repr(float(x)) for x in (*w, *a)) + "\n")
    with open(root / "cam0" / "data.csv", "w", newline="") as f:
        f.write("#timestamp [ns],filename\n")
        for t in trace.frame_t:
            f.write(f"{int(t)},{int(t)}.png\n")


# ---------------------------------------------------------------------------
# run logs

RUNLOG_MAGIC = "# viosched-runlog v1"
_HEADER_KEY = re.compile(r"[A-Za-z0-9_.-]+")
_INT_COLS = {"t_ns", "frame_id", "phi", "lambda", "kappa_f", "kappa_p"}
_OPT_INT_COLS = {"w"}
_OPT_FLOAT_COLS = {"chi", "delta"}
_FLOAT_COLS = {"omega_avg", "accel_avg", "omega_T", "accel_T"}


def _mean(xs) -> float:
    xs = list(xs)
    try:
        return statistics.fmean(xs)
    except OverflowError:  # huge finite values; power-of-two scaling is exact
        return math.ldexp(math.fsum(math.ldexp(x, -64) for x in xs) / len(xs), 64)


def summarize(records: Sequence[DecisionRecord]) -> dict[str, Any]:
    n = len(records)
    chis = [r.chi for r in records if r.chi is not None]
    drops = sum(1 for r in records if r.action == "Drop")
    changes = sum(
        1 for prev, cur in zip(records, records[1:]) if (prev.phi, prev.lam) != (cur.phi, cur.lam)
    )
    return {
        "frames": n,
        "mean_chi": _mean(chis) if chis else None,
        "drop_rate": drops / n if n else 0.0,
        "drops": drops,
        "agility_drops": sum(1 for r in records if r.reason == "Agility"),
        "resource_drops": sum(1 for r in records if r.reason == "Resource"),
        "param_changes": changes,
        "mean_phi": _mean(r.phi for r in records) if n else None,
        "mean_lambda": _mean(r.lam for r in records) if n else None,
    }


@dataclass
class RunLog:
    header: dict[str, Any]
    records: list[DecisionRecord] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        # keep the header JSON-native so it survives a write/read cycle
        self.header = json.loads(json.dumps(self.header, sort_keys=True))
        if not self.summary:
            self.summary = summarize(self.records)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        # float.__repr__ also keeps numpy scalars plain
        return float.__repr__(v)
    return str(v)


def write_run_log(path: str | Path, log: RunLog) -> bool:
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(RUNLOG_MAGIC + "\n")
        for key in sorted(log.header):
            if not _HEADER_KEY.fullmatch(key):
                raise ValueError(f"header key {key!r} must match {_HEADER_KEY.pattern}")
            f.write(f"# header.{key}: {json.dumps(log.header[key], sort_keys=True)}\n")
        f.write(f"# summary: {json.dumps(log.summary, sort_keys=True)}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in log.records:
            w.writerow([_fmt(v) for v in r])
    return True


def _parse_cell(col: str, s: str, line: int, path):
    try:
        if col in _INT_COLS:
            return int(s)
        if col in _OPT_INT_COLS:
            return int(s) if s else None
        if col in _OPT_FLOAT_COLS:
            return float(s) if s else None
        if col in _FLOAT_COLS:
            return float(s)
        return s
    except ValueError:
        raise SchemaMismatch(f"{path}:{line}: bad value {s!r} in column {col!r}") from None


def read_run_log(path: str | Path) -> RunLog:
    path = Path(path)
    header: dict[str, Any] = {}
    summary: dict[str, Any] = {}
    records: list[DecisionRecord] = []
    with open(path, newline="") as f:
        first = f.readline().rstrip("\n")
        if first != RUNLOG_MAGIC:
            raise SchemaMismatch(f"{path}: not a run log (missing '{RUNLOG_MAGIC}')")
        line_no = 1
        cols = None
        reader_lines = []
        for line in f:
            line_no += 1
            if line.startswith("#"):
                body = line[1:].strip()
                key, _, val = body.partition(": ")
                if key.startswith("header."):
                    header[key[len("header."):]] = json.loads(val)
                elif key == "summary":
                    summary = json.loads(val)
                continue
            reader_lines.append((line_no, line))
        if not reader_lines:
            raise SchemaMismatch(f"{path}: missing column header row")
        hdr_line, hdr = reader_lines[0]
        cols = next(csv.reader([hdr]))
        missing = [c for c in LOG_COLUMNS if c not in cols]
        if missing:
            raise SchemaMismatch(f"{path}: missing column {missing[0]!r}" + (f" (and {missing[1:]})" if len(missing) > 1 else ""))
        extra = [c for c in cols if c not in LOG_COLUMNS]
        if extra:
            raise SchemaMismatch(f"{path}: unexpected column {extra[0]!r}")
        idx = [cols.index(c) for c in LOG_COLUMNS]
        for ln, row in reader_lines[1:]:
            fields = next(csv.reader([row]))
            if len(fields) != len(cols):
                raise SchemaMismatch(f"{path}:{ln}: expected {len(cols)} fields, got {len(fields)}")
            records.append(DecisionRecord(*(_parse_cell(c, fields[i], ln, path) for c, i in zip(LOG_COLUMNS, idx))))
    return RunLog(header, records, summary or summarize(records))


def write_series(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_series(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]

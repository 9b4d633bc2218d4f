"""Run configuration: TOML file with dotted keys, overridden by CLI flags."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agility import AgilityConfig
from .errors import VioSchedError
from .policy import PolicyConfig
from .workload import CostModel


class ConfigError(VioSchedError, ValueError):
    pass


_AGILITY_KEYS = {f.name for f in fields(AgilityConfig)}
_POLICY_KEYS = {f.name for f in fields(PolicyConfig)}
_COST_KEYS = {f.name for f in fields(CostModel)}

KNOWN_KEYS = (
    {f"monitor.{k}" for k in ("rate_hz", "cores", "mode", "aggregate")}
    | {"cpu.override", "cpu.nominal_ghz"}
    | {f"agility.{k}" for k in _AGILITY_KEYS}
    | {f"policy.{k}" for k in _POLICY_KEYS | {"step_phi", "step_lambda"}}
    | {f"sim.{k}" for k in _COST_KEYS | {"seed", "calibrate_pct", "cpu"}}
    | {f"run.{k}" for k in ("method", "adaptive", "trace", "synthetic", "stress", "out", "profiles")}
)


_TABLE_VALUES = {"cpu.override", "sim.cpu"}


def flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        # these are table values, not sections
        if isinstance(v, dict) and key not in _TABLE_VALUES:
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = flatten(data)
    unknown = sorted(set(flat) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s) {', '.join(unknown)}")
    return flat


def parse_kv(text: str) -> dict[str, str]:
    """``a=1,b=2`` -> {'a': '1', 'b': '2'}."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    method: str = "smsckf"
    adaptive: bool = True
    seed: int = 0
    mode: str = "sim"
    trace: Path | None = None
    synthetic: str | None = None
    stress: str | None = None  # csv path, or "default"
    out: Path = Path("out")
    profiles: Path | None = None
    cpu_override: dict[str, float] | None = None
    sim_cpu: dict[str, float] | None = None
    nominal_ghz: float | None = None
    monitor_rate_hz: float = 1.0
    monitor_cores: list[int] = field(default_factory=lambda: [0])
    aggregate: str = "mean"
    calibrate_pct: float | None = 60.0
    step_phi: int | None = None
    step_lambda: int | None = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    agility: AgilityConfig = field(default_factory=AgilityConfig)
    cost: CostModel = field(default_factory=CostModel)

    def snapshot(self) -> dict[str, Any]:
        from dataclasses import asdict

        d = asdict(self)
        for k in ("trace", "out", "profiles"):
            d[k] = None if d[k] is None else str(d[k])
        return d


def _cpu_dict(v, what) -> dict[str, float]:
    if isinstance(v, str):
        v = parse_kv(v)
    if not isinstance(v, dict):
        raise ConfigError(f"{what} must be a table or mu=..,nu_max=.. string")
    try:
        d = {k: float(x) for k, x in v.items()}
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    bad = set(d) - {"mu", "nu_min", "nu_max"}
    if bad or "mu" not in d or "nu_max" not in d:
        raise ConfigError(f"{what} needs mu and nu_max (nu_min optional), got {sorted(d)}")
    d.setdefault("nu_min", d["nu_max"])
    return d


def build_run_config(file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Merge defaults, config-file values and CLI overrides (in that order)."""
    vals = dict(file_values or {})
    vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(vals) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(unknown)}")

    def section(prefix, keys):
        return {k: vals[f"{prefix}.{k}"] for k in keys if f"{prefix}.{k}" in vals}

    try:
        policy = PolicyConfig(**section("policy", _POLICY_KEYS))
        agility = AgilityConfig(**section("agility", _AGILITY_KEYS))
        cost = CostModel(**section("sim", _COST_KEYS))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    rc = RunConfig(policy=policy, agility=agility, cost=cost)
    try:
        if "run.method" in vals:
            rc.method = str(vals["run.method"])
        if "run.adaptive" in vals:
            rc.adaptive = parse_bool(vals["run.adaptive"])
        if "sim.seed" in vals:
            rc.seed = int(vals["sim.seed"])
            if rc.seed < 0:
                raise ConfigError("seed must be non-negative")
        if "sim.calibrate_pct" in vals:
            v = vals["sim.calibrate_pct"]
            rc.calibrate_pct = None if v in ("", "none", False) else float(v)
        if "sim.cpu" in vals:
            rc.sim_cpu = _cpu_dict(vals["sim.cpu"], "sim.cpu")
        if "monitor.mode" in vals:
            rc.mode = str(vals["monitor.mode"])
            if rc.mode not in ("live", "sim"):
                raise ConfigError(f"monitor.mode must be live or sim, got {rc.mode!r}")
        if "monitor.rate_hz" in vals:
            rc.monitor_rate_hz = float(vals["monitor.rate_hz"])
            if rc.monitor_rate_hz <= 0:
                raise ConfigError("monitor.rate_hz must be positive")
        if "monitor.cores" in vals:
            v = vals["monitor.cores"]
            rc.monitor_cores = [int(x) for x in (v.split(",") if isinstance(v, str) else v)]
        if "monitor.aggregate" in vals:
            rc.aggregate = str(vals["monitor.aggregate"])
            if rc.aggregate not in ("mean", "max", "sum"):
                raise ConfigError(f"monitor.aggregate must be mean|max|sum, got {rc.aggregate!r}")
        if "cpu.override" in vals:
            rc.cpu_override = _cpu_dict(vals["cpu.override"], "cpu.override")
        if "cpu.nominal_ghz" in vals:
            rc.nominal_ghz = float(vals["cpu.nominal_ghz"])
        for k in ("step_phi", "step_lambda"):
            if f"policy.{k}" in vals:
                setattr(rc, k, int(vals[f"policy.{k}"]))
        for k in ("trace", "out", "profiles"):
            if f"run.{k}" in vals:
                setattr(rc, k, Path(vals[f"run.{k}"]))
        if "run.synthetic" in vals:
            rc.synthetic = str(vals["run.synthetic"])
        if "run.stress" in vals:
            rc.stress = str(vals["run.stress"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    for k in ("trace", "profiles"):
        p = getattr(rc, k)
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{k} path does not exist: {p}")
    if rc.stress not in (None, "default", "none") and not Path(rc.stress).exists():
        raise ConfigError(f"stress schedule not found: {rc.stress}")
    return rc

"""Hardware region classification and per-method initial parameters."""
from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cpu_monitor import CpuSpec
from .errors import ProfileFileError, UnknownMethod

log = logging.getLogger(__name__)
_warned: set[tuple] = set()


def _warn_once(key, msg, *args):
    if key not in _warned:
        _warned.add(key)
        log.warning(msg, *args)

R1_MAX_GHZ = 1.2
R2_MAX_GHZ = 2.1

METHOD_ALIASES = {
    "vins": "vins",
    "vinsmono": "vins",
    "vins-mono": "vins",
    "smsckf": "smsckf",
    "s-msckf": "smsckf",
    "msckf": "smsckf",
    "okvis": "okvis",
}


class Region(str, enum.Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


def classify_region(spec: CpuSpec) -> Region:
    """Map (core count, max clock) onto R1/R2/R3.

    Single-core hosts are always R1.  Multi-core hosts below 1.2 GHz fall
    outside the multi-core bands and are also treated as R1.  2.1 GHz
    itself belongs to R2.
    """
    nu = spec.clock_max
    if spec.core_count == 1:
        if nu >= R1_MAX_GHZ:
            _warn_once((1, nu), "single-core host at %.2f GHz has no dedicated region; using R1", nu)
        return Region.R1
    if nu < R1_MAX_GHZ:
        _warn_once((spec.core_count, nu), "multi-core host below %.1f GHz has no dedicated region; using R1", R1_MAX_GHZ)
        return Region.R1
    if nu <= R2_MAX_GHZ:
        return Region.R2
    return Region.R3


@dataclass(frozen=True)
class ParamSet:
    """Adaptable knobs. ``None`` marks a field that does not apply to the method."""

    phi: int
    lam: int
    window: int | None = None
    window_temporal: int | None = None
    window_keyframe: int | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None
    resolution: tuple[int, int] = (752, 480)

    def __post_init__(self):
        for name in ("phi", "lam", "window", "window_temporal", "window_keyframe", "grid_rows", "grid_cols"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if min(self.resolution) < 1:
            raise ValueError(f"bad resolution {self.resolution}")

    @property
    def effective_window(self) -> int:
        """Poses held by the back-end (both OKVIS windows count)."""
        if self.window is not None:
            return self.window
        return (self.window_temporal or 0) + (self.window_keyframe or 0)

    @property
    def feature_count(self) -> int:
        """Total features per frame; grid methods budget per cell."""
        if self.grid_rows is not None and self.grid_cols is not None:
            return self.phi * self.grid_rows * self.grid_cols
        return self.phi

    @property
    def megapixels(self) -> float:
        return self.resolution[0] * self.resolution[1] / 1e6


@dataclass(frozen=True)
class MethodProfile:
    method: str
    phi_online: bool
    lambda_online: bool
    fixed_at_compile: tuple[str, ...] = ()
    fixed_at_init: tuple[str, ...] = ()
    phi_min: int = 1
    phi_nominal: int = 1
    lambda_min: int = 1
    lambda_nominal: int = 1
    step_phi: int = 1
    step_lambda: int = 1
    label: str = ""
    limits: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False, hash=False)

    @property
    def bounds(self) -> tuple[int, int, int, int, int, int]:
        return (self.phi_min, self.phi_nominal, self.lambda_min, self.lambda_nominal, self.step_phi, self.step_lambda)

    def online_fields(self) -> set[str]:
        out = set()
        if self.phi_online:
            out.add("phi")
        if self.lambda_online:
            out.add("lam")
        return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _poly(coeffs: dict, f: float, names: tuple[str, ...]) -> float:
    return sum(float(coeffs.get(n, 0.0)) * f**i for i, n in enumerate(names))


# param name -> (coefficient names, limit key in [bounds])
_LAWS = {
    "window": (("p0", "p1", "p2"), "window"),
    "window_temporal": (("p0", "p1", "p2"), "window"),
    "window_keyframe": (("p0", "p1", "p2"), "window"),
    "grid_rows": (("p0", "p1", "p2"), "grid"),
    "grid_cols": (("p0", "p1", "p2"), "grid"),
    "phi": (("a0", "a1"), "phi"),
    "lambda": (("b0", "b1"), "lambda"),
}


class ProfileTable:
    """Coefficient tables loaded from a TOML profile file."""

    def __init__(self, data: dict[str, Any], source: str, digest: str):
        self.data = data
        self.source = source
        self.digest = digest
        self._validate()

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ProfileTable":
        if path is None:
            raw = resources.files("viosched").joinpath("data/profiles.toml").read_bytes()
            source = "<builtin profiles.toml>"
        else:
            try:
                raw = Path(path).read_bytes()
            except OSError as exc:
                raise ProfileFileError(f"{path}: {exc.strerror or exc}") from exc
            source = str(path)
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ProfileFileError(f"{source}: {exc}") from exc
        return cls(data, source, hashlib.sha256(raw).hexdigest())

    def _validate(self):
        methods = self.methods()
        if not methods:
            raise ProfileFileError(f"{self.source}: no method sections")
        for m in methods:
            sec = self.data[m]
            for key in ("phi_online", "lambda_online", "bounds"):
                if key not in sec:
                    raise ProfileFileError(f"{self.source}: [{m}] missing '{key}'")
            for b in ("phi_min", "phi_max", "step_phi", "lambda_min", "lambda_max", "step_lambda"):
                if b not in sec["bounds"]:
                    raise ProfileFileError(f"{self.source}: [{m}.bounds] missing '{b}'")
            for r in Region:
                reg = sec.get(r.value)
                if not isinstance(reg, dict):
                    raise ProfileFileError(f"{self.source}: missing section [{m}.{r.value}]")
                for p in ("phi", "lambda"):
                    if p not in reg:
                        raise ProfileFileError(f"{self.source}: [{m}.{r.value}] missing '{p}'")
                for p, coeffs in reg.items():
                    if p in _LAWS:
                        if not isinstance(coeffs, dict):
                            raise ProfileFileError(f"{self.source}: [{m}.{r.value}] '{p}' must be a table")
                        bad = set(coeffs) - set(_LAWS[p][0])
                        if bad:
                            raise ProfileFileError(
                                f"{self.source}: [{m}.{r.value}] '{p}' has unknown coefficients {sorted(bad)}"
                            )

    def methods(self) -> list[str]:
        return [k for k, v in self.data.items() if isinstance(v, dict) and "bounds" in v]

    def section(self, method: str) -> tuple[str, dict]:
        key = METHOD_ALIASES.get(method.lower(), method.lower())
        if key not in self.data or not isinstance(self.data[key], dict):
            raise UnknownMethod(f"unknown method {method!r}; known: {', '.join(self.methods())}")
        return key, self.data[key]

    def limits(self, method: str) -> dict[str, tuple[int, int]]:
        _, sec = self.section(method)
        b = sec["bounds"]
        out = {}
        for name in ("phi", "lambda", "window", "grid"):
            if f"{name}_min" in b:
                out[name] = (int(b[f"{name}_min"]), int(b.get(f"{name}_max", 10**9)))
        return out


_DEFAULT_TABLE: ProfileTable | None = None


def default_table() -> ProfileTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = ProfileTable.load()
    return _DEFAULT_TABLE


def method_profile(method: str, table: ProfileTable | None = None) -> MethodProfile:
    """Online/init/compile classification and adaptation bounds for ``method``.

    The nominal values default to the upper limits; use
    :func:`compute_initial_parameters` for host-specific nominals.
    """
    table = table or default_table()
    key, sec = table.section(method)
    b = sec["bounds"]
    return MethodProfile(
        method=key,
        phi_online=bool(sec["phi_online"]),
        lambda_online=bool(sec["lambda_online"]),
        fixed_at_compile=tuple(sec.get("fixed_at_compile", ())),
        fixed_at_init=tuple(sec.get("fixed_at_init", ())),
        phi_min=int(b["phi_min"]),
        phi_nominal=int(b["phi_max"]),
        lambda_min=int(b["lambda_min"]),
        lambda_nominal=int(b["lambda_max"]),
        step_phi=int(b["step_phi"]),
        step_lambda=int(b["step_lambda"]),
        label=sec.get("label", key),
        limits=table.limits(key),
    )


def compute_initial_parameters(
    spec: CpuSpec, method: str, table: ProfileTable | None = None
) -> tuple[ParamSet, MethodProfile]:
    table = table or default_table()
    profile = method_profile(method, table)
    _, sec = table.section(method)
    region = classify_region(spec)
    laws = sec[region.value]
    f_mhz = spec.clock_max * 1000.0
    limits = profile.limits

    values: dict[str, int] = {}
    for name, coeffs in laws.items():
        if name not in _LAWS:
            continue
        coeff_names, limit_key = _LAWS[name]
        v = _round_half_up(_poly(coeffs, f_mhz, coeff_names))
        lo, hi = limits.get(limit_key, (1, 10**9))
        values[name] = min(hi, max(lo, v))

    w, h = table.data.get("base_resolution", (752, 480))
    ds = int(laws.get("downscale", 1))
    if ds not in (1, 2):
        raise ProfileFileError(f"{table.source}: downscale must be 1 or 2, got {ds}")
    params = ParamSet(
        phi=values["phi"],
        lam=values["lambda"],
        window=values.get("window"),
        window_temporal=values.get("window_temporal"),
        window_keyframe=values.get("window_keyframe"),
        grid_rows=values.get("grid_rows"),
        grid_cols=values.get("grid_cols"),
        resolution=(int(w) // ds, int(h) // ds),
    )
    profile = replace(
        profile,
        phi_nominal=params.phi,
        lambda_nominal=params.lam,
        phi_min=min(profile.phi_min, params.phi),
        lambda_min=min(profile.lambda_min, params.lam),
    )
    return params, profile

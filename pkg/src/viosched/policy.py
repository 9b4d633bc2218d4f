"""Per-frame process/drop gating and tiered parameter updates.

One call to :func:`on_frame` per incoming camera frame:

1. low agility and enough frames since the last drop -> drop (Agility)
2. usage excess over ``chi_T`` above ``delta_0`` and enough frames since
   the last drop -> drop (Resource)
3. otherwise, if enough frames passed since the last parameter change,
   update the iteration and feature budgets from the usage excess
4. processed frames feed a queue whose fill level nudges the agility
   thresholds up (too many processed) or down (too few)
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import NamedTuple

from .agility import AgilityState
from .cpu_monitor import UsageSample
from .errors import InvalidSpec
from .profiles import MethodProfile, ParamSet

log = logging.getLogger(__name__)


@dataclass
class PolicyConfig:
    chi_T: float = 70.0
    delta_0: float = 20.0
    delta_1: float = 10.0
    delta_2: float = 5.0
    kappa_0f: int = 4
    kappa_0p: int = 10
    l_I: int = 40
    c_high: int = 32
    c_low: int = 20
    init_frames: int = 100

    def __post_init__(self):
        if not (0 < self.chi_T <= 100):
            raise InvalidSpec(f"chi_T must be in (0, 100], got {self.chi_T}")
        if not (self.delta_0 >= self.delta_1 >= self.delta_2 >= 0):
            raise InvalidSpec("need delta_0 >= delta_1 >= delta_2 >= 0")
        if not (0 <= self.c_low < self.c_high <= self.l_I):
            raise InvalidSpec("need 0 <= c_low < c_high <= l_I")
        if self.kappa_0f < 1 or self.kappa_0p < 1:
            raise InvalidSpec("kappa_0f and kappa_0p must be >= 1")
        if self.init_frames < 0:
            raise InvalidSpec("init_frames must be >= 0")


class Action(str, enum.Enum):
    PROCESS = "Process"
    DROP = "Drop"


class Reason(str, enum.Enum):
    AGILITY = "Agility"
    RESOURCE = "Resource"
    # a drop condition held but hysteresis or initialization vetoed it
    FORCED = "Forced-Process"
    NOMINAL = "Nominal"


class GateState:
    __slots__ = ("queue", "queue_sum", "kappa_f", "kappa_p", "frames_seen")

    def __init__(self, l_I: int):
        self.queue: deque[int] = deque(maxlen=l_I)
        self.queue_sum = 0
        self.kappa_f = 0
        self.kappa_p = 0
        self.frames_seen = 0

    def push(self, bit: int):
        q = self.queue
        if len(q) == q.maxlen:
            self.queue_sum -= q[0]
        q.append(bit)
        self.queue_sum += bit


@dataclass(frozen=True, slots=True)
class Decision:
    action: Action
    reason: Reason
    params_after: ParamSet
    delta: float | None
    chi: float | None = None
    stale: bool = False
    threshold_move: str | None = None  # "raise" / "lower" / None


class DecisionRecord(NamedTuple):
    """One row of the decision log."""

    t_ns: int
    frame_id: int
    action: str
    reason: str
    chi: float | None
    delta: float | None
    phi: int
    lam: int
    w: int | None
    omega_avg: float
    accel_avg: float
    omega_T: float
    accel_T: float
    kappa_f: int
    kappa_p: int


# CSV header; "lambda" is spelt out on disk
LOG_COLUMNS = (
    "t_ns", "frame_id", "action", "reason", "chi", "delta", "phi", "lambda", "w",
    "omega_avg", "accel_avg", "omega_T", "accel_T", "kappa_f", "kappa_p",
)


def compute_delta(chi: float, config: PolicyConfig) -> float:
    return chi - config.chi_T


def update_iterations(delta: float, params: ParamSet, profile: MethodProfile, config: PolicyConfig | None = None) -> ParamSet:
    if not profile.lambda_online:
        return params
    d1 = (config or PolicyConfig()).delta_1
    if delta > d1:
        lam = max(params.lam - profile.step_lambda, profile.lambda_min)
    elif delta <= 0:
        lam = min(params.lam + profile.step_lambda, profile.lambda_nominal)
    else:
        return params
    return params if lam == params.lam else replace(params, lam=lam)


def update_features(delta: float, params: ParamSet, profile: MethodProfile, config: PolicyConfig | None = None) -> ParamSet:
    if not profile.phi_online:
        return params
    d2 = (config or PolicyConfig()).delta_2
    if delta > d2:
        phi = max(params.phi - profile.step_phi, profile.phi_min)
    elif delta <= 0:
        phi = min(params.phi + profile.step_phi, profile.phi_nominal)
    else:
        return params
    return params if phi == params.phi else replace(params, phi=phi)


def on_frame(
    gate: GateState,
    agility: AgilityState,
    latest_usage: UsageSample | None,
    params: ParamSet,
    profile: MethodProfile,
    config: PolicyConfig,
    *,
    now_ns: int | None = None,
    usage_period_ns: int | None = None,
) -> tuple[Decision, GateState, AgilityState, ParamSet]:
    """Run the gating/adaptation step for one frame.

    ``gate`` and ``agility`` are updated in place and returned for
    convenience.  Without any usage sample yet, the resource branch and
    parameter updates are skipped.
    """
    gate.frames_seen += 1
    past_init = gate.frames_seen > config.init_frames
    may_drop = past_init and gate.kappa_f > config.kappa_0f

    stale = False
    if latest_usage is not None and now_ns is not None and usage_period_ns:
        if now_ns - latest_usage.timestamp > 3 * usage_period_ns:
            stale = True
            log.debug("usage sample from %d is stale at %d", latest_usage.timestamp, now_ns)

    low = agility.warm and agility.is_low_agility()
    if low and may_drop:
        gate.push(0)
        gate.kappa_f = 0
        return Decision(Action.DROP, Reason.AGILITY, params, None, None, stale), gate, agility, params

    chi = delta = None
    if latest_usage is not None:
        chi = latest_usage.usage_pct
        delta = chi - config.chi_T
        if delta > config.delta_0 and may_drop:
            gate.push(0)
            gate.kappa_f = 0
            return Decision(Action.DROP, Reason.RESOURCE, params, delta, chi, stale), gate, agility, params
        if gate.kappa_p > config.kappa_0p:
            params = update_iterations(delta, params, profile, config)
            params = update_features(delta, params, profile, config)
            gate.kappa_p = 0

    wanted_drop = low or (delta is not None and delta > config.delta_0)
    reason = Reason.FORCED if wanted_drop else Reason.NOMINAL

    gate.push(1)
    move = None
    if gate.queue_sum > config.c_high:
        agility.adjust_thresholds("raise")
        move = "raise"
    elif gate.queue_sum < config.c_low:
        agility.adjust_thresholds("lower")
        move = "lower"
    gate.kappa_f += 1
    gate.kappa_p += 1
    return Decision(Action.PROCESS, reason, params, delta, chi, stale, move), gate, agility, params


class AdaptationPolicy:
    """Stateful wrapper: owns the gate, agility estimate and current params."""

    def __init__(
        self,
        params: ParamSet,
        profile: MethodProfile,
        config: PolicyConfig | None = None,
        agility: AgilityState | None = None,
        usage_period_ns: int | None = None,
    ):
        self.config = config or PolicyConfig()
        self.profile = profile
        self.params = params
        self.agility = agility if agility is not None else AgilityState()
        self.gate = GateState(self.config.l_I)
        self.usage_period_ns = usage_period_ns

    def on_frame(self, frame_id: int, t_ns: int, usage: UsageSample | None) -> tuple[Decision, DecisionRecord]:
        d, _, ag, self.params = on_frame(
            self.gate, self.agility, usage, self.params, self.profile, self.config,
            now_ns=t_ns, usage_period_ns=self.usage_period_ns,
        )
        w, a = ag._averages()
        p = self.params
        rec = DecisionRecord(
            t_ns, frame_id, d.action.value, d.reason.value, d.chi, d.delta,
            p.phi, p.lam, p.effective_window or None, w, a,
            ag.omega_threshold, ag.accel_threshold, self.gate.kappa_f, self.gate.kappa_p,
        )
        return d, rec

"""Sliding-window IMU agility estimate and the adaptive gating thresholds."""
from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .errors import InsufficientWindow, InvalidSpec, NonMonotonicTimestamp


@dataclass(frozen=True, slots=True)
class ImuSample:
    timestamp: int  # ns
    angular_velocity: tuple[float, float, float]  # rad/s
    linear_acceleration: tuple[float, float, float]  # m/s^2

    def __post_init__(self):
        if not all(map(math.isfinite, (*self.angular_velocity, *self.linear_acceleration))):
            raise ValueError(f"non-finite IMU sample at t={self.timestamp}")


@dataclass
class AgilityConfig:
    l_alpha: int = 40
    omega_threshold_init: float = 0.3
    accel_threshold_init: float = 0.5
    threshold_step: float = 0.05
    omega_threshold_min: float = 0.05
    omega_threshold_max: float = 2.0
    accel_threshold_min: float = 0.1
    accel_threshold_max: float = 3.0
    gravity_compensation: bool = True
    gravity: float = 9.81

    def __post_init__(self):
        if self.l_alpha < 1:
            raise InvalidSpec("l_alpha must be >= 1")
        if not (0 < self.threshold_step < 1):
            raise InvalidSpec("threshold_step must lie in (0, 1)")
        for ch in ("omega", "accel"):
            lo = getattr(self, f"{ch}_threshold_min")
            hi = getattr(self, f"{ch}_threshold_max")
            init = getattr(self, f"{ch}_threshold_init")
            if not (0 < lo <= init <= hi):
                raise InvalidSpec(f"{ch} thresholds need 0 < min <= init <= max, got {lo}, {init}, {hi}")


class AgilitySnapshot(NamedTuple):
    omega_avg: float
    accel_avg: float
    omega_threshold: float
    accel_threshold: float
    count: int


class AgilityState:
    """Running means of |omega| and |a| over the last ``l_alpha`` IMU samples.

    Averages are recomputed lazily from the stored window (fsum), so they
    equal the plain mean of the window rather than a drifting running sum.
    """

    def __init__(self, config: AgilityConfig | None = None):
        self.config = config or AgilityConfig()
        n = self.config.l_alpha
        self.omega_window: deque[float] = deque(maxlen=n)
        self.accel_window: deque[float] = deque(maxlen=n)
        self.omega_threshold = self.config.omega_threshold_init
        self.accel_threshold = self.config.accel_threshold_init
        self.last_timestamp: int | None = None
        self._avgs: tuple[float, float] | None = (0.0, 0.0)
        self._lock = threading.Lock()

    # -- magnitudes ---------------------------------------------------------

    def magnitudes(self, sample: ImuSample) -> tuple[float, float]:
        w = math.hypot(*sample.angular_velocity)
        a = math.hypot(*sample.linear_acceleration)
        if self.config.gravity_compensation:
            a = max(0.0, a - self.config.gravity)
        return w, a

    def push_imu(self, sample: ImuSample) -> "AgilityState":
        w, a = self.magnitudes(sample)
        return self.push_magnitudes([w], [a], sample.timestamp, first_timestamp=sample.timestamp)

    def push_magnitudes(
        self,
        omega_mags: Iterable[float],
        accel_mags: Iterable[float],
        last_timestamp: int,
        first_timestamp: int | None = None,
    ) -> "AgilityState":
        """Bulk push of precomputed magnitudes (used by the simulator)."""
        first = last_timestamp if first_timestamp is None else first_timestamp
        if self.last_timestamp is not None and first <= self.last_timestamp:
            raise NonMonotonicTimestamp(
                f"IMU timestamp {first} does not exceed previous {self.last_timestamp}"
            )
        with self._lock:
            self.omega_window.extend(omega_mags)
            self.accel_window.extend(accel_mags)
            self.last_timestamp = last_timestamp
            self._avgs = None
        return self

    # -- averages -----------------------------------------------------------

    def _averages(self) -> tuple[float, float]:
        avgs = self._avgs
        if avgs is None:
            n = len(self.omega_window)
            avgs = (math.fsum(self.omega_window) / n, math.fsum(self.accel_window) / n) if n else (0.0, 0.0)
            self._avgs = avgs
        return avgs

    @property
    def omega_avg(self) -> float:
        return self._averages()[0]

    @property
    def accel_avg(self) -> float:
        return self._averages()[1]

    def __len__(self):
        return len(self.omega_window)

    @property
    def warm(self) -> bool:
        return 2 * len(self.omega_window) >= self.config.l_alpha

    def snapshot(self) -> AgilitySnapshot:
        with self._lock:
            w, a = self._averages()
            return AgilitySnapshot(w, a, self.omega_threshold, self.accel_threshold, len(self.omega_window))

    # -- gating -------------------------------------------------------------

    def is_low_agility(self) -> bool:
        if not self.warm:
            raise InsufficientWindow(
                f"{len(self)} samples in window, need {self.config.l_alpha / 2:g}"
            )
        w, a = self._averages()
        return w < self.omega_threshold and a < self.accel_threshold

    def adjust_thresholds(self, direction: str) -> "AgilityState":
        cfg = self.config
        if direction == "raise":
            f = 1.0 + cfg.threshold_step
        elif direction == "lower":
            f = 1.0 - cfg.threshold_step
        else:
            raise ValueError(f"direction must be 'raise' or 'lower', not {direction!r}")
        with self._lock:
            self.omega_threshold = min(cfg.omega_threshold_max, max(cfg.omega_threshold_min, self.omega_threshold * f))
            self.accel_threshold = min(cfg.accel_threshold_max, max(cfg.accel_threshold_min, self.accel_threshold * f))
        return self


def push_imu(state: AgilityState, sample: ImuSample) -> AgilityState:
    return state.push_imu(sample)


def is_low_agility(state: AgilityState) -> bool:
    return state.is_low_agility()


def adjust_thresholds(state: AgilityState, direction: str) -> AgilityState:
    return state.adjust_thresholds(direction)

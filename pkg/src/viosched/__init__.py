"""CPU-aware parameter and frame-rate adaptation for visual-inertial odometry."""
from .agility import AgilityConfig, AgilityState, ImuSample, adjust_thresholds, is_low_agility, push_imu
from .cpu_monitor import (
    CpuSpec,
    UsageSample,
    UsageSampler,
    pin_process_to_core,
    probe_cpu_spec,
    start_usage_sampler,
)
from .policy import AdaptationPolicy, Decision, DecisionRecord, GateState, PolicyConfig, on_frame
from .profiles import MethodProfile, ParamSet, ProfileTable, Region, classify_region, compute_initial_parameters
from .trace_io import (
    RunLog,
    SensorTrace,
    SyntheticSpec,
    generate_synthetic_trace,
    load_euroc,
    parse_cam_timestamps,
    parse_imu_csv,
    read_run_log,
    write_run_log,
)
from .workload import CostModel, StressSchedule, frame_cost, inject_live_stress, simulate

__version__ = "0.1.0"

__all__ = [
    "AdaptationPolicy",
    "AgilityConfig",
    "AgilityState",
    "CostModel",
    "CpuSpec",
    "Decision",
    "DecisionRecord",
    "GateState",
    "ImuSample",
    "MethodProfile",
    "ParamSet",
    "PolicyConfig",
    "ProfileTable",
    "Region",
    "RunLog",
    "SensorTrace",
    "StressSchedule",
    "SyntheticSpec",
    "UsageSample",
    "UsageSampler",
    "adjust_thresholds",
    "classify_region",
    "compute_initial_parameters",
    "frame_cost",
    "generate_synthetic_trace",
    "inject_live_stress",
    "is_low_agility",
    "load_euroc",
    "on_frame",
    "parse_cam_timestamps",
    "parse_imu_csv",
    "pin_process_to_core",
    "probe_cpu_spec",
    "push_imu",
    "read_run_log",
    "simulate",
    "start_usage_sampler",
    "write_run_log",
]

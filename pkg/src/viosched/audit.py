"""Invariant checks over decision logs.

Every check works from log columns alone, so the same code audits a live
simulation and a RunLog read back from disk.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

from .policy import DecisionRecord, PolicyConfig
from .profiles import MethodProfile, ParamSet


class Violation(NamedTuple):
    check: str
    frame_id: int
    message: str


def drop_spacing(records: Sequence[DecisionRecord], kappa_0f: int) -> list[Violation]:
    out = []
    processed_since = None
    for r in records:
        if r.action == "Drop":
            if processed_since is not None and processed_since <= kappa_0f:
                out.append(Violation("drop_spacing", r.frame_id, f"only {processed_since} processed frames since last drop"))
            processed_since = 0
        elif processed_since is not None:
            processed_since += 1
    return out


def init_drops(records: Sequence[DecisionRecord], init_frames: int) -> list[Violation]:
    return [
        Violation("init_drop", r.frame_id, "drop during initialization period")
        for r in records[:init_frames]
        if r.action == "Drop"
    ]


def _changes(records, attrs=("phi", "lam")):
    for i in range(1, len(records)):
        prev, cur = records[i - 1], records[i]
        if any(getattr(prev, a) != getattr(cur, a) for a in attrs):
            yield i, prev, cur


def param_change_spacing(records: Sequence[DecisionRecord], kappa_0p: int) -> list[Violation]:
    out = []
    last = None
    for i, _, cur in _changes(records):
        if last is not None and i - last <= kappa_0p:
            out.append(Violation("param_spacing", cur.frame_id, f"parameters changed {i - last} frames after previous change"))
        last = i
    return out


def param_bounds(records: Sequence[DecisionRecord], profile: MethodProfile) -> list[Violation]:
    out = []
    for r in records:
        if not (profile.phi_min <= r.phi <= profile.phi_nominal):
            out.append(Violation("bounds", r.frame_id, f"phi={r.phi} outside [{profile.phi_min}, {profile.phi_nominal}]"))
        if not (profile.lambda_min <= r.lam <= profile.lambda_nominal):
            out.append(Violation("bounds", r.frame_id, f"lambda={r.lam} outside [{profile.lambda_min}, {profile.lambda_nominal}]"))
    return out


def tier_ordering(records: Sequence[DecisionRecord], config: PolicyConfig) -> list[Violation]:
    out = []
    for r in records:
        if r.reason == "Resource" and not (r.delta is not None and r.delta > config.delta_0):
            out.append(Violation("tier", r.frame_id, f"resource drop with delta={r.delta}"))
    for _, prev, cur in _changes(records):
        d = cur.delta
        if cur.lam < prev.lam and not (d is not None and d > config.delta_1):
            out.append(Violation("tier", cur.frame_id, f"lambda decreased with delta={d}"))
        if cur.phi < prev.phi and not (d is not None and d > config.delta_2):
            out.append(Violation("tier", cur.frame_id, f"phi decreased with delta={d}"))
    return out


def profile_conformance(records: Sequence[DecisionRecord], profile: MethodProfile) -> list[Violation]:
    """Parameters not adapted online must stay constant for the whole run."""
    frozen = ["w"]
    if not profile.phi_online:
        frozen.append("phi")
    if not profile.lambda_online:
        frozen.append("lam")
    out = []
    for _, prev, cur in _changes(records, frozen):
        moved = [a for a in frozen if getattr(prev, a) != getattr(cur, a)]
        out.append(Violation("profile", cur.frame_id, f"{profile.method} mutated {', '.join(moved)}"))
    return out


def audit_records(records: Sequence[DecisionRecord], profile: MethodProfile, config: PolicyConfig) -> list[Violation]:
    return [
        *drop_spacing(records, config.kappa_0f),
        *init_drops(records, config.init_frames),
        *param_change_spacing(records, config.kappa_0p),
        *param_bounds(records, profile),
        *tier_ordering(records, config),
        *profile_conformance(records, profile),
    ]


def audit_baseline(records: Sequence[DecisionRecord], params: ParamSet) -> list[Violation]:
    out = []
    for r in records:
        if r.action != "Process":
            out.append(Violation("baseline", r.frame_id, "baseline dropped a frame"))
        if (r.phi, r.lam) != (params.phi, params.lam):
            out.append(Violation("baseline", r.frame_id, "baseline changed parameters"))
    return out

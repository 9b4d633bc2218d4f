from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from viosched.agility import AgilityConfig, AgilityState
from viosched.cpu_monitor import CpuSpec, UsageSample
from viosched.errors import InvalidSpec
from viosched.policy import (
    Action,
    AdaptationPolicy,
    GateState,
    PolicyConfig,
    Reason,
    compute_delta,
    on_frame,
    update_features,
    update_iterations,
)
from viosched.profiles import ParamSet, compute_initial_parameters, method_profile

CFG = PolicyConfig()
HOST = CpuSpec(2, 0.8, 1.7)


def agility(low: bool, l_alpha=4):
    s = AgilityState(AgilityConfig(l_alpha=l_alpha))
    v = 0.0 if low else 5.0
    s.push_magnitudes([v] * l_alpha, [v] * l_alpha, 1)
    return s


def set_motion(state: AgilityState, low: bool, t: int):
    n = state.config.l_alpha
    v = 0.0 if low else 5.0
    state.push_magnitudes([v] * n, [v] * n, t)


def usage(chi, t=0):
    return UsageSample(t, 0, chi)


def smsckf():
    return compute_initial_parameters(HOST, "smsckf")


def gate_past_init(kappa_f=CFG.kappa_0f + 1, kappa_p=0):
    g = GateState(CFG.l_I)
    g.frames_seen = CFG.init_frames + 10
    g.kappa_f = kappa_f
    g.kappa_p = kappa_p
    return g


@pytest.mark.parametrize("chi, chi_T, expected", [(80, 60, 20), (60, 60, 0), (40, 60, -20)])
def test_compute_delta(chi, chi_T, expected):
    assert compute_delta(chi, PolicyConfig(chi_T=chi_T)) == expected


def test_low_agility_drop():
    params, prof = smsckf()
    g = gate_past_init()
    d, g, _, p = on_frame(g, agility(True), usage(50.0), params, prof, CFG)
    assert (d.action, d.reason) == (Action.DROP, Reason.AGILITY)
    assert list(g.queue) == [0]
    assert g.kappa_f == 0
    assert p == params


def test_resource_drop():
    params, prof = smsckf()
    chi = CFG.chi_T + CFG.delta_0 + 5
    d, g, _, _ = on_frame(gate_past_init(), agility(False), usage(chi), params, prof, CFG)
    assert (d.action, d.reason) == (Action.DROP, Reason.RESOURCE)
    assert d.delta == pytest.approx(CFG.delta_0 + 5)


@pytest.mark.parametrize("chi", [0.0, 70.0, 99.0])
@pytest.mark.parametrize("low", [True, False])
def test_no_drop_during_init(chi, low):
    params, prof = smsckf()
    g = GateState(CFG.l_I)
    g.kappa_f = 50
    d, *_ = on_frame(g, agility(low), usage(chi), params, prof, CFG)
    assert d.action is Action.PROCESS


def test_kappa_f_at_limit_processes():
    params, prof = smsckf()
    d, g, _, _ = on_frame(gate_past_init(kappa_f=CFG.kappa_0f), agility(True), usage(50.0), params, prof, CFG)
    assert (d.action, d.reason) == (Action.PROCESS, Reason.FORCED)
    assert g.kappa_f == CFG.kappa_0f + 1
    assert list(g.queue) == [1]


def test_update_iterations_examples():
    prof = replace(method_profile("smsckf"), step_lambda=2, lambda_min=4, lambda_nominal=12)
    p = ParamSet(phi=5, lam=10)
    assert update_iterations(CFG.delta_1 + 1, p, prof).lam == 8
    assert update_iterations(CFG.delta_1 + 1, replace(p, lam=4), prof).lam == 4
    assert update_iterations(CFG.delta_1, p, prof).lam == 10
    assert update_iterations(-1, p, prof).lam == 12
    vins = method_profile("vins")
    for d in (-50, 0, 7, 50):
        assert update_iterations(d, p, vins) == p


def test_update_features_examples():
    prof = replace(method_profile("vins"), step_phi=10, phi_min=40, phi_nominal=150)
    p = ParamSet(phi=150, lam=4, window=8)
    assert update_features(CFG.delta_2 + 1, p, prof).phi == 140
    assert update_features(-5, p, prof).phi == 150
    assert update_features(CFG.delta_2, p, prof).phi == 150
    assert update_features(CFG.delta_2 + 1, replace(p, phi=40), prof).phi == 40
    okvis = method_profile("okvis")
    for d in (-50, 0, 7, 50):
        assert update_features(d, p, okvis) == p


def test_parameter_update_waits_for_kappa_p():
    params, prof = smsckf()
    chi = CFG.chi_T + CFG.delta_1 + 1
    d, g, _, p = on_frame(gate_past_init(kappa_p=CFG.kappa_0p), agility(False), usage(chi), params, prof, CFG)
    assert p == params and g.kappa_p == CFG.kappa_0p + 1
    d, g, _, p = on_frame(g, agility(False), usage(chi), params, prof, CFG)
    assert p.lam == params.lam - prof.step_lambda
    assert p.phi == params.phi - prof.step_phi
    assert g.kappa_p == 1


def test_no_usage_skips_resource_and_updates():
    params, prof = smsckf()
    d, g, _, p = on_frame(gate_past_init(kappa_p=50), agility(False), None, params, prof, CFG)
    assert d.action is Action.PROCESS and d.delta is None and p == params


def test_stale_usage_is_flagged_not_fatal():
    params, prof = smsckf()
    d, *_ = on_frame(gate_past_init(), agility(False), usage(50.0, t=0), params, prof, CFG,
                     now_ns=4_000_000_000, usage_period_ns=1_000_000_000)
    assert d.stale and d.action is Action.PROCESS


def test_threshold_feedback():
    params, prof = smsckf()
    g = gate_past_init()
    for _ in range(CFG.c_high + 1):
        g.push(1)
    ag = agility(False)
    before = ag.omega_threshold
    d, *_ = on_frame(g, ag, usage(50.0), params, prof, CFG)
    assert d.threshold_move == "raise" and ag.omega_threshold > before

    g = gate_past_init()
    ag = agility(False)
    d, *_ = on_frame(g, ag, usage(50.0), params, prof, CFG)
    assert d.threshold_move == "lower" and ag.omega_threshold < before


@pytest.mark.parametrize(
    "kw",
    [dict(chi_T=0), dict(chi_T=101), dict(delta_1=30), dict(c_low=35), dict(c_high=41), dict(kappa_0f=0), dict(init_frames=-1)],
)
def test_config_validation(kw):
    with pytest.raises(InvalidSpec):
        PolicyConfig(**kw)


frames = st.lists(st.tuples(st.booleans(), st.one_of(st.none(), st.floats(0, 100))), min_size=1, max_size=400)


@given(frames, st.sampled_from(["vins", "smsckf", "okvis"]), st.integers(0, 30), st.integers(1, 6), st.integers(1, 12))
def test_policy_invariants(stream, method, init_frames, kappa_0f, kappa_0p):
    cfg = PolicyConfig(init_frames=init_frames, kappa_0f=kappa_0f, kappa_0p=kappa_0p)
    params, prof = compute_initial_parameters(HOST, method)
    ag = AgilityState(AgilityConfig(l_alpha=2))
    pol = AdaptationPolicy(params, prof, cfg, ag)

    last_drop = None
    processed_since = 0
    last_change = None
    prev = params
    for k, (low, chi) in enumerate(stream):
        set_motion(ag, low, k + 1)
        kf = pol.gate.kappa_f
        d, rec = pol.on_frame(k, k, None if chi is None else usage(chi, k))
        g = pol.gate

        assert len(g.queue) <= cfg.l_I and g.queue_sum == sum(g.queue)
        assert 0 <= g.queue_sum <= cfg.l_I
        if d.action is Action.DROP:
            assert k >= init_frames
            assert kf > kappa_0f
            if last_drop is not None:
                assert processed_since > kappa_0f
            last_drop, processed_since = k, 0
        else:
            processed_since += 1
        if d.threshold_move == "raise":
            assert g.queue_sum > cfg.c_high
        elif d.threshold_move == "lower":
            assert g.queue_sum < cfg.c_low

        p = d.params_after
        assert prof.phi_min <= p.phi <= prof.phi_nominal
        assert prof.lambda_min <= p.lam <= prof.lambda_nominal
        if (p.phi, p.lam) != (prev.phi, prev.lam):
            if last_change is not None:
                assert k - last_change > kappa_0p
            last_change = k
            if p.lam < prev.lam:
                assert d.delta > cfg.delta_1
            if p.phi < prev.phi:
                assert d.delta > cfg.delta_2
        if not prof.lambda_online:
            assert p.lam == params.lam
        if not prof.phi_online:
            assert p.phi == params.phi
        if d.reason is Reason.RESOURCE:
            assert d.delta > cfg.delta_0
        prev = p


@given(frames)
def test_policy_deterministic(stream):
    def run():
        params, prof = smsckf()
        ag = AgilityState(AgilityConfig(l_alpha=2))
        pol = AdaptationPolicy(params, prof, PolicyConfig(init_frames=5), ag)
        out = []
        for k, (low, chi) in enumerate(stream):
            set_motion(ag, low, k + 1)
            out.append(pol.on_frame(k, k, None if chi is None else usage(chi, k))[1])
        return out

    assert run() == run()

import subprocess
import sys

import pytest

from viosched.cli import compare_logs, main
from viosched.errors import TraceMismatch
from viosched.trace_io import read_run_log, read_series


def run(*args):
    return subprocess.run([sys.executable, "-m", "viosched.cli", *args], capture_output=True, text=True, timeout=120)


def test_probe_reference_host():
    r = run("probe", "--cpu-override", "mu=2,nu_min=0.8,nu_max=1.7")
    assert r.returncode == 0
    assert "Region: R2" in r.stdout
    for label in ("VINS-Mono", "S-MSCKF", "OKVIS"):
        assert label in r.stdout
    assert "method,mu,nu_min,nu_max,region" in r.stdout


def test_probe_override_r1(tmp_path):
    assert main(["probe", "--cpu-override", "mu=1,nu_max=1.0", "--out", str(tmp_path)]) == 0
    cols, rows = read_series(tmp_path / "probe.csv")
    assert {row[cols.index("region")] for row in rows} == {"R1"}


def test_probe_malformed_profiles(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[vins\nphi_online = true\n")
    r = run("probe", "--profiles", str(bad), "--cpu-override", "mu=2,nu_max=1.7")
    assert r.returncode == 2
    assert "bad.toml" in r.stderr and "line 1" in r.stderr


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[policy]\nnot_a_key = 1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--synthetic", "duration=-1", "--out", str(tmp_path)]) == 2


def test_simulate_outputs(tmp_path):
    out = tmp_path / "run"
    code = main(["simulate", "--method", "smsckf", "--synthetic", "V1_02", "--stress", "default", "--out", str(out)])
    assert code == 0
    for name in ("runlog.csv", "usage.csv", "summary.csv", "plot_series.csv", "stress.csv"):
        assert (out / name).exists()
    log = read_run_log(out / "runlog.csv")
    recs = log.records
    t0 = recs[0].t_ns
    nominal = (recs[0].phi, recs[0].lam)
    # dips line up with the stress intervals
    for a, b, _ in log.header["stress"]:
        inside = [r for r in recs if a + 3 <= (r.t_ns - t0) / 1e9 < b]
        assert any(r.phi < nominal[0] for r in inside) and any(r.lam < nominal[1] for r in inside)
    calm = [r for r in recs if 10 <= (r.t_ns - t0) / 1e9 < 20]
    assert all((r.phi, r.lam) == nominal for r in calm)


def test_simulate_baseline(tmp_path):
    assert main(["simulate", "--synthetic", "duration=20", "--adaptive=false", "--out", str(tmp_path)]) == 0
    recs = read_run_log(tmp_path / "runlog.csv").records
    assert not any(r.action == "Drop" for r in recs)
    assert len({(r.phi, r.lam, r.w) for r in recs}) == 1


def test_simulate_constant_low_drops(tmp_path):
    assert main(["simulate", "--synthetic", "duration=10,profile=constant-low", "--out", str(tmp_path)]) == 0
    recs = read_run_log(tmp_path / "runlog.csv").records
    assert not any(r.action == "Drop" for r in recs[:100])
    assert sum(r.reason == "Agility" for r in recs[100:]) > 0


def test_simulate_is_byte_reproducible(tmp_path):
    args = ["simulate", "--synthetic", "duration=30,profile=random", "--stress", "default", "--seed", "5"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("runlog.csv", "usage.csv", "summary.csv", "plot_series.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_with_euroc_fixture(tmp_path, fixtures_dir):
    code = main(["simulate", "--trace", str(fixtures_dir / "mini_V1_02"), "--out", str(tmp_path)])
    assert code == 0
    assert len(read_run_log(tmp_path / "runlog.csv").records) == 80


def test_compare(tmp_path, capsys):
    common = ["simulate", "--synthetic", "V1_02", "--stress", "default", "--seed", "1"]
    main([*common, "--adaptive=false", "--out", str(tmp_path / "base")])
    main([*common, "--out", str(tmp_path / "adapt")])
    base = read_run_log(tmp_path / "base" / "runlog.csv")
    adapt = read_run_log(tmp_path / "adapt" / "runlog.csv")
    rows = {m: (a, b, d) for m, a, b, d in compare_logs(base, adapt)}
    chi_b = [r.chi for r in base.records if r.chi is not None]
    chi_a = [r.chi for r in adapt.records if r.chi is not None]
    assert rows["mean_chi"][2] == pytest.approx(sum(chi_b) / len(chi_b) - sum(chi_a) / len(chi_a))
    assert rows["mean_chi"][2] > 0

    assert all(d == 0 for _, _, _, d in compare_logs(base, base))
    assert main(["compare", str(tmp_path / "base" / "runlog.csv"), str(tmp_path / "adapt" / "runlog.csv"),
                 "--out", str(tmp_path)]) == 0
    assert "mean_chi" in capsys.readouterr().out
    assert (tmp_path / "compare.csv").exists()


def test_compare_trace_mismatch(tmp_path):
    main(["simulate", "--synthetic", "duration=10", "--seed", "1", "--out", str(tmp_path / "a")])
    main(["simulate", "--synthetic", "duration=10", "--seed", "2", "--out", str(tmp_path / "b")])
    a = read_run_log(tmp_path / "a" / "runlog.csv")
    b = read_run_log(tmp_path / "b" / "runlog.csv")
    with pytest.raises(TraceMismatch):
        compare_logs(a, b)
    assert main(["compare", str(tmp_path / "a" / "runlog.csv"), str(tmp_path / "b" / "runlog.csv")]) == 2


def test_violation_exit_code(tmp_path, monkeypatch):
    from viosched import audit, cli

    monkeypatch.setattr(cli, "simulate", _with_fake_violation(cli.simulate, audit))
    assert main(["simulate", "--synthetic", "duration=10", "--out", str(tmp_path)]) == 1
    assert (tmp_path / "violations.csv").exists()


def _with_fake_violation(fn, audit):
    def wrapped(*a, **kw):
        rep = fn(*a, **kw)
        rep.violations.append(audit.Violation("test", 0, "injected"))
        return rep

    return wrapped

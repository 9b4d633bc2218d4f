import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viosched.agility import AgilityState
from viosched.errors import InvalidSpec, MalformedRow, NonMonotonicTimestamp, SchemaMismatch
from viosched.policy import LOG_COLUMNS, DecisionRecord
from viosched.trace_io import (
    RunLog,
    SensorTrace,
    SyntheticSpec,
    generate_synthetic_trace,
    load_euroc,
    measured_rate_hz,
    parse_cam_timestamps,
    parse_imu_csv,
    read_run_log,
    read_series,
    summarize,
    write_asl,
    write_run_log,
    write_series,
)

IMU_HEADER = "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n"


def test_three_row_imu(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text(IMU_HEADER + "10,0.1,0.2,0.3,9.7,0.0,-0.1\n20,1,2,3,4,5,6\n30,-0.5,0,0,0,0,9.81\n")
    s = parse_imu_csv(p)
    assert [x.timestamp for x in s] == [10, 20, 30]
    assert s[0].angular_velocity == (0.1, 0.2, 0.3)
    assert s[0].linear_acceleration == (9.7, 0.0, -0.1)
    assert s[2].linear_acceleration == (0.0, 0.0, 9.81)


def test_five_row_cam(tmp_path):
    p = tmp_path / "cam.csv"
    p.write_text("#timestamp [ns],filename\n" + "".join(f"{t},{t}.png\n" for t in (5, 10, 15, 20, 25)))
    ev = parse_cam_timestamps(p)
    assert [e.frame_id for e in ev] == [0, 1, 2, 3, 4]
    assert [e.timestamp for e in ev] == [5, 10, 15, 20, 25]


def test_empty_data_section(tmp_path):
    p = tmp_path / "cam.csv"
    p.write_text("#timestamp [ns],filename\n")
    assert parse_cam_timestamps(p) == []


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_imu_csv(tmp_path / "nope.csv")


@pytest.mark.parametrize(
    "name, parser, exc, line",
    [
        ("imu_short_row.csv", parse_imu_csv, MalformedRow, 6),
        ("imu_bad_value.csv", parse_imu_csv, MalformedRow, 9),
        ("imu_backwards.csv", parse_imu_csv, NonMonotonicTimestamp, 4),
        ("cam_missing_field.csv", parse_cam_timestamps, MalformedRow, 5),
        ("cam_bad_timestamp.csv", parse_cam_timestamps, MalformedRow, 7),
    ],
)
def test_malformed_fixtures(fixtures_dir, name, parser, exc, line):
    with pytest.raises(exc) as ei:
        parser(fixtures_dir / "malformed" / name)
    assert ei.value.line == line
    assert f":{line}:" in str(ei.value)


def test_fixture_rates(sequence_dir):
    tr = load_euroc(sequence_dir)
    assert abs(measured_rate_hz(tr.imu_t) - 200) <= 2
    assert abs(measured_rate_hz(tr.frame_t) - 20) <= 0.5
    assert abs(np.median(np.diff(tr.frame_t)) - 50e6) <= 1e6


def test_synthetic_counts_and_rates():
    tr = generate_synthetic_trace(SyntheticSpec(duration_s=10, imu_rate_hz=200, frame_rate_hz=20))
    assert len(tr.imu_t) == 2000
    assert len(tr.frame_t) == 200
    assert set(np.diff(tr.imu_t).tolist()) == {5_000_000}


def test_synthetic_same_seed_identical():
    spec = SyntheticSpec(duration_s=5, profile="random")
    a, b = generate_synthetic_trace(spec, 4), generate_synthetic_trace(spec, 4)
    for x, y in zip((a.imu_t, a.gyro, a.accel, a.frame_t), (b.imu_t, b.gyro, b.accel, b.frame_t)):
        assert x.tobytes() == y.tobytes()
    assert a.digest() == b.digest()
    assert generate_synthetic_trace(spec, 5).digest() != a.digest()


def test_constant_low_is_low_agility():
    tr = generate_synthetic_trace(SyntheticSpec(duration_s=1, profile="constant-low", noise=0.0))
    s = AgilityState()
    for x in tr.imu_samples()[:40]:
        s.push_imu(x)
    assert s.is_low_agility()


def test_synthetic_spec_parse():
    s = SyntheticSpec.parse("duration=10,profile=constant-low")
    assert (s.duration_s, s.profile) == (10.0, "constant-low")
    with pytest.raises(InvalidSpec):
        SyntheticSpec.parse("duration=10,profile=zigzag")
    with pytest.raises(InvalidSpec):
        SyntheticSpec.parse("speed=3")
    with pytest.raises(InvalidSpec):
        SyntheticSpec(imu_rate_hz=0)


def test_asl_round_trip(tmp_path):
    tr = generate_synthetic_trace(SyntheticSpec(duration_s=2))
    write_asl(tr, tmp_path / "seq")
    back = load_euroc(tmp_path / "seq")
    assert back.digest() == tr.digest()


def _record(i, action="Process", reason="Nominal", chi=55.5, phi=90, lam=4, w=8):
    return DecisionRecord(1_000 * i, i, action, reason, chi, None if chi is None else chi - 70.0, phi, lam, w,
                          0.1 * i, 0.2, 0.3, 0.5, i % 5, i % 11)


def test_run_log_round_trip_100(tmp_path):
    recs = [_record(i, action="Drop" if i % 7 == 0 else "Process", chi=None if i < 3 else 40.0 + i / 3) for i in range(100)]
    log = RunLog({"method": "vins", "seed": 3, "cpu_spec": {"mu": 2, "nu_min": 0.8, "nu_max": 1.7}}, recs)
    write_run_log(tmp_path / "log.csv", log)
    assert read_run_log(tmp_path / "log.csv") == log


floats = st.floats(allow_nan=False, allow_infinity=False, width=64)
opt_floats = st.one_of(st.none(), floats)
records = st.builds(
    DecisionRecord,
    st.integers(0, 2**62), st.integers(0, 10**6), st.sampled_from(["Process", "Drop"]),
    st.sampled_from(["Agility", "Resource", "Forced-Process", "Nominal"]), opt_floats, opt_floats,
    st.integers(1, 500), st.integers(1, 50), st.one_of(st.none(), st.integers(1, 40)),
    floats, floats, floats, floats, st.integers(0, 10**6), st.integers(0, 10**6),
)


header_keys = st.from_regex(r"[A-Za-z0-9_.-]{1,10}", fullmatch=True)
header_vals = st.integers() | st.text(max_size=10) | st.lists(floats, max_size=3)


@given(st.lists(records, max_size=30), st.dictionaries(header_keys, header_vals, max_size=5))
def test_run_log_round_trip_property(tmp_path_factory, recs, header):
    path = tmp_path_factory.getbasetemp() / "roundtrip.csv"
    log = RunLog(header, recs)
    write_run_log(path, log)
    assert read_run_log(path) == log


def test_missing_column_named(tmp_path):
    p = tmp_path / "log.csv"
    write_run_log(p, RunLog({}, [_record(1)]))
    text = p.read_text().replace(",omega_T,", ",").replace(",0.3,", ",")
    p.write_text(text)
    with pytest.raises(SchemaMismatch, match="omega_T"):
        read_run_log(p)


def test_bad_header_key_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_run_log(tmp_path / "x.csv", RunLog({"two words": 1}))


def test_foreign_file_rejected(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(",".join(LOG_COLUMNS) + "\n")
    with pytest.raises(SchemaMismatch):
        read_run_log(p)


def test_summary_drop_rate_from_rows():
    recs = [_record(i, action="Drop" if i in (10, 20, 33) else "Process") for i in range(50)]
    s = summarize(recs)
    assert s["drop_rate"] == sum(r.action == "Drop" for r in recs) / len(recs)
    assert s["frames"] == 50


def test_series_round_trip(tmp_path):
    write_series(tmp_path / "s.csv", ("t_s", "chi"), [(0.5, 10.0), (1.0, None)])
    cols, rows = read_series(tmp_path / "s.csv")
    assert cols == ["t_s", "chi"] and rows == [["0.5", "10.0"], ["1.0", ""]]


def test_sensor_trace_from_samples():
    tr = generate_synthetic_trace(SyntheticSpec(duration_s=1))
    back = SensorTrace.from_samples(tr.imu_samples(), tr.frames(), tr.name)
    assert back.digest() == tr.digest()
    assert back.duration_s == pytest.approx(1.0, abs=0.01)


def test_summary_survives_extreme_usage_values():
    big = 1.7976931348623157e308
    recs = [_record(i, chi=big) for i in range(3)]
    assert RunLog({}, recs).summary["mean_chi"] == pytest.approx(big)

#!/usr/bin/env python3
"""Regenerate the mini EuRoC-layout fixtures under tests/fixtures/.

Three short sequences (IMU 200 Hz, camera 20 Hz) with small timestamp
jitter and epoch-scale start times, plus a handful of deliberately
malformed files whose bad line numbers the tests assert.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from viosched.trace_io import SyntheticSpec, generate_synthetic_trace

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

SEQUENCES = {
    "mini_V1_02": (SyntheticSpec(duration_s=4.0, profile="sinusoid", omega=0.45, accel=0.45, period_s=2.0, start_ns=1403715523912143104), 1),
    "mini_V2_02": (SyntheticSpec(duration_s=4.0, profile="piecewise", omega=0.55, accel=0.5, period_s=1.0, start_ns=1413393212255760384), 2),
    "mini_MH_01": (SyntheticSpec(duration_s=4.0, profile="constant-low", start_ns=1403636579758555392), 3),
}

IMU_HEADER = ("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
              "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n")
CAM_HEADER = "#timestamp [ns],filename\n"


def _jitter(t: np.ndarray, rng, max_ns: int) -> np.ndarray:
    return t + rng.integers(-max_ns, max_ns + 1, size=t.shape)


def write_sequence(name: str, spec: SyntheticSpec, seed: int, out: Path):
    tr = generate_synthetic_trace(spec, seed)
    rng = np.random.default_rng(seed + 100)
    imu_t = _jitter(tr.imu_t, rng, 20_000)
    cam_t = _jitter(tr.frame_t, rng, 50_000)
    imu_dir = out / name / "mav0" / "imu0"
    cam_dir = out / name / "mav0" / "cam0"
    imu_dir.mkdir(parents=True, exist_ok=True)
    cam_dir.mkdir(parents=True, exist_ok=True)
    with open(imu_dir / "data.csv", "w", newline="") as f:
        f.write(IMU_HEADER)
        for t, w, a in zip(imu_t, tr.gyro, tr.accel):
            f.write(f"{int(t)},{w[0]:.10g},{w[1]:.10g},{w[2]:.10g},{a[0]:.10g},{a[1]:.10g},{a[2]:.10g}\n")
    with open(cam_dir / "data.csv", "w", newline="") as f:
        f.write(CAM_HEADER)
        for t in cam_t:
            f.write(f"{int(t)},{int(t)}.png\n")


def write_malformed(out: Path):
    d = out / "malformed"
    d.mkdir(parents=True, exist_ok=True)
    t0 = 1403715523912143104
    good = [f"{t0 + i * 5_000_000},0.01,0.02,0.03,9.7,0.1,0.2\n" for i in range(10)]

    # line 6: six fields instead of seven
    rows = list(good)
    rows[4] = f"{t0 + 4 * 5_000_000},0.01,0.02,0.03,9.7,0.1\n"
    (d / "imu_short_row.csv").write_text(IMU_HEADER + "".join(rows))

    # line 9: non-numeric gyro value
    rows = list(good)
    rows[7] = f"{t0 + 7 * 5_000_000},0.01,abc,0.03,9.7,0.1,0.2\n"
    (d / "imu_bad_value.csv").write_text(IMU_HEADER + "".join(rows))

    # line 4: timestamp goes backwards
    rows = list(good)
    rows[2] = f"{t0},0.01,0.02,0.03,9.7,0.1,0.2\n"
    (d / "imu_backwards.csv").write_text(IMU_HEADER + "".join(rows))

    # line 5: camera row missing filename
    cam = [f"{t0 + i * 50_000_000},{t0 + i * 50_000_000}.png\n" for i in range(6)]
    cam[3] = f"{t0 + 3 * 50_000_000}\n"
    (d / "cam_missing_field.csv").write_text(CAM_HEADER + "".join(cam))

    # line 7: non-integer timestamp
    cam = [f"{t0 + i * 50_000_000},{t0 + i * 50_000_000}.png\n" for i in range(6)]
    cam[5] = "14037155.5e9,x.png\n"
    (d / "cam_bad_timestamp.csv").write_text(CAM_HEADER + "".join(cam))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=FIXTURES)
    args = ap.parse_args(argv)
    for name, (spec, seed) in SEQUENCES.items():
        write_sequence(name, spec, seed, args.out)
    write_malformed(args.out)
    print(f"fixtures written to {args.out}")


if __name__ == "__main__":
    main()

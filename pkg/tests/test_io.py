import csv
import math
import struct

import numpy as np
import pytest

from sqcorr import io as sio
from sqcorr.detection import SampleRecord, preset_scenario, simulate_record
from sqcorr.estimators import SnlCalibration, calibrate_snl
from sqcorr.experiments import SweepSpec, Swept, run_attenuation_sweep, run_phase_sweep
from sqcorr.gaussian import LossMode


def test_header_layout():
    rec = SampleRecord(np.array([0.0, 1.0]), np.array([0.5, -2.0]), ac_coupled=True)
    data = sio.encode_record(rec)
    assert len(data) == 16 + 16 * 2
    assert data[:4] == b"SQC1"
    assert struct.unpack_from("<H", data, 4)[0] == 1
    assert struct.unpack_from("<Q", data, 6)[0] == 2
    assert struct.unpack_from("<H", data, 14)[0] & 1 == 1
    assert struct.unpack_from("<4d", data, 16) == (0.0, 0.5, 1.0, -2.0)


def test_record_round_trip_bit_exact(tmp_path):
    sc = preset_scenario("kerr").with_samples(1000).with_seed(3)
    rec = simulate_record(sc)
    p = tmp_path / "r.sqc"
    size = sio.write_record(p, rec)
    assert size == p.stat().st_size == 16 + 16 * 1000
    back = sio.read_record(p)
    assert back == rec
    assert back.scenario == sc
    assert back.seed_used == 3
    first = p.read_bytes(), sio.sidecar_path(p).read_bytes()
    sio.write_record(p, back)
    assert (p.read_bytes(), sio.sidecar_path(p).read_bytes()) == first


def test_external_record_round_trip(tmp_path):
    rec = SampleRecord(np.array([1e-300, -0.0, 3.5]), np.array([np.pi, 2.0, 1e300]), ac_coupled=False)
    p = tmp_path / "x.sqc"
    sio.write_record(p, rec)
    back = sio.read_record(p)
    assert back == rec and back.scenario is None and not back.ac_coupled
    assert np.signbit(back.ch1[1])


def test_sidecar_contents(tmp_path, monkeypatch):
    rec = simulate_record(preset_scenario("opa").with_samples(20))
    p = tmp_path / "r.sqc"
    sio.write_record(p, rec)
    meta = sio.read_sidecar(p)
    assert meta["scenario.preset"] == "opa"
    assert meta["time.stop_s"] == repr(20 / 2e6)
    assert "time.created_unix" not in meta
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    sio.write_record(p, rec)
    assert sio.read_sidecar(p)["time.created_unix"] == "1700000000"


@pytest.mark.parametrize("mutate", [
    lambda d: d[:-1],
    lambda d: d + b"\0" * 16,
    lambda d: b"XQC1" + d[4:],
    lambda d: d[:4] + struct.pack("<H", 9) + d[6:],
    lambda d: d[:10],
])
def test_malformed_records(mutate):
    rec = SampleRecord(np.zeros(3), np.ones(3))
    with pytest.raises(sio.RecordFormatError):
        sio.decode_record(mutate(sio.encode_record(rec)))


def test_config_build_and_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\npreset = opa\nlo.phase_rad=0.5\n\ndet1.en_variance=3\n")
    sc = sio.build_scenario(sio.load_config(p), {"digitizer.seed": "17"})
    assert sc.lo.phase == 0.5 and sc.det1.en_variance == 3.0 and sc.digitizer.seed == 17
    assert sc.digitizer.sample_rate == 2e6
    with pytest.raises(sio.ConfigError) as exc:
        sio.build_scenario({"digitizer.n_samples": "1"})
    assert exc.value.key == "digitizer.n_samples"
    with pytest.raises(sio.ConfigError) as exc:
        sio.build_scenario({"lo.colour": "red"})
    assert exc.value.key == "lo.colour"
    with pytest.raises(sio.ConfigError):
        sio.build_scenario({"state.vx": "0.5", "state.vy": "1.0"})
    with pytest.raises(sio.ConfigError):
        sio.build_scenario({"loss.mode": "sideways"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("preset opa\n")
    with pytest.raises(sio.ConfigError):
        sio.load_config(bad)


def test_override_of_loss_mode_leaves_preset():
    sc = sio.build_scenario({"preset": "opa"}, {"loss.mode": "both"})
    assert sc.loss.mode is LossMode.BOTH and sc.preset_name.value == "custom"


def test_every_scenario_expressible(tmp_path):
    sc = preset_scenario("kerr").with_phase(1.234567890123).with_en(0.1, 7.0)
    p = tmp_path / "k.cfg"
    sio.write_config(p, sc)
    assert sio.build_scenario(sio.load_config(p)) == sc


def test_calibration_file_round_trip(tmp_path):
    cal = calibrate_snl([(100.0, 410.0), (200.0, 811.5), (400.0, 1609.9)], 10.0, point_se=[0.6, 1.1, 2.3])
    p = tmp_path / "cal.txt"
    sio.write_calibration(p, cal)
    first = p.read_bytes()
    back = sio.read_calibration(p)
    assert back == cal
    sio.write_calibration(p, back)
    assert p.read_bytes() == first
    p.write_text("format=other\n")
    with pytest.raises(sio.RecordFormatError):
        sio.read_calibration(p)


def test_csv_table(tmp_path):
    base = preset_scenario("opa").with_samples(50_000)
    res = run_attenuation_sweep(SweepSpec(base, Swept.TRANSMISSION, [0.25, 0.5, 1.0]))
    p = tmp_path / "t.csv"
    sio.write_sweep(p, res)
    text = p.read_text()
    rows = sio.read_table(p)
    assert list(rows[0])[0] == "transmission"
    assert len(rows) == 3
    assert float(rows[2]["cov"]) == res.rows[2].cov
    assert "# fitted_exponent=" in text.splitlines()[-4]
    assert float(rows[0]["transmission"]) == 0.25
    xy = sio.companion_path(p).read_text().splitlines()
    assert len(xy) == 4 and xy[0].startswith("# transmission")
    # pandas-style readers skip the comment lines
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert len(list(csv.reader(body))) == 4


def test_fmt17_round_trips():
    for x in (0.1, 1 / 3, 2.0 ** -1074, 1e308, -123.456):
        assert float(sio.fmt17(x)) == x
    assert sio.fmt17(math.nan) == "nan"


def test_phase_table_has_witness(tmp_path):
    res = run_phase_sweep(SweepSpec(preset_scenario("opa").with_samples(50_000), Swept.LO_PHASE, [0.0, 1.5707963]))
    text = sio.sweep_to_csv(res)
    rows = list(csv.DictReader([ln for ln in text.splitlines() if not ln.startswith("#")]))
    assert [r["witness"] for r in rows] == ["squeezed", "antisqueezed"]

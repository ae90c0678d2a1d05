import json
from pathlib import Path

import numpy as np
import pytest

from shakenlattice import protocol as proto
from shakenlattice.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, read_table
from shakenlattice.config import ConfigError, ExperimentConfig, config_from_dict, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(tmp_path, *argv, config=None):
    args = ["--output-dir", str(tmp_path)]
    if config is not None:
        args = ["--config", str(config)] + args
    return main(args + list(argv))


@pytest.fixture(scope="module")
def optimized(tmp_path_factory):
    out = tmp_path_factory.mktemp("opt")
    assert main(["--output-dir", str(out), "optimize", "-n", "1"]) == EXIT_OK
    return out


def _write_protocol(path, protocol):
    path.write_text(proto.dumps(protocol))
    return path


def test_optimize_writes_artifacts(optimized):
    for name in ("protocol_n1.json", "summary_n1.json", "optimize_n1.log.jsonl",
                 "optimize_n1.meta.json"):
        assert (optimized / name).exists()
    summary = json.loads((optimized / "summary_n1.json").read_text())
    assert summary["recombination_error"] < 10.0
    assert summary["split_error"] < 5.0
    assert summary["config_hash"] == ExperimentConfig().hash()


def test_optimize_is_byte_identical(optimized, tmp_path):
    assert _run(tmp_path, "optimize", "-n", "1") == EXIT_OK
    for name in ("protocol_n1.json", "summary_n1.json", "optimize_n1.log.jsonl"):
        assert (tmp_path / name).read_bytes() == (optimized / name).read_bytes()


def test_protocol_artifact_carries_config_hash(optimized):
    doc = json.loads((optimized / "protocol_n1.json").read_text())
    assert doc["config_hash"] == ExperimentConfig().hash()
    assert proto.load(optimized / "protocol_n1.json").duration == pytest.approx(0.4e-3)


def test_optimize_rejects_zero_segments(tmp_path, capsys):
    assert _run(tmp_path, "optimize", "-n", "0") == EXIT_USAGE
    assert "-n must be >= 1" in capsys.readouterr().err


def test_missing_argument_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run(tmp_path, "optimize")
    assert exc.value.code == EXIT_USAGE


def test_scan_single_point(optimized, tmp_path):
    out = tmp_path / "scan.tsv"
    rc = _run(tmp_path, "scan", "--protocol", str(optimized / "protocol_n1.json"),
              "--grid", "0", "--out", str(out))
    assert rc == EXIT_OK
    cols = read_table(out)
    assert cols["accel"] == ["0.0"]
    pops = [float(cols[f"P{n:+d}"][0]) for n in range(-2, 3)]
    assert sum(pops) + float(cols["leak"][0]) == pytest.approx(1.0, abs=1e-10)
    assert all(v == "ok" for v in cols["status"])


def test_scan_default_grid_has_nine_rows(optimized, tmp_path):
    out = tmp_path / "scan.tsv"
    assert _run(tmp_path, "scan", "--protocol", str(optimized / "protocol_n1.json"),
                "--out", str(out)) == EXIT_OK
    assert len(read_table(out)["accel"]) == 9


def test_scan_bad_grid(optimized, tmp_path):
    assert _run(tmp_path, "scan", "--protocol", str(optimized / "protocol_n1.json"),
                "--grid", "a,b") == EXIT_USAGE


def test_sensitivity_needs_three_protocols(optimized, tmp_path, capsys):
    p = str(optimized / "protocol_n1.json")
    assert _run(tmp_path, "sensitivity", p, p) == EXIT_USAGE
    assert "at least 3" in capsys.readouterr().err


def test_malformed_protocol_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"segments": [{"duration": 2e-4}, {"frequencies": [1.0]}]}))
    assert _run(tmp_path, "scan", "--protocol", str(bad)) == EXIT_USAGE
    assert "segment 1" in capsys.readouterr().err


def test_missing_protocol_file(tmp_path):
    assert _run(tmp_path, "scan", "--protocol", str(tmp_path / "nope.json")) == EXIT_USAGE


def _csv(path):
    rows = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][1:]
    return np.array([[float(v) for v in ln.split(",")] for ln in rows])


def test_export_zero_waveform(tmp_path):
    p = _write_protocol(tmp_path / "zero.json",
                        proto.ShakingProtocol((proto.WaveformSegment.zero(),) * 2))
    out = tmp_path / "w.csv"
    assert _run(tmp_path, "export-waveform", "--protocol", str(p), "--out", str(out)) == EXIT_OK
    data = _csv(out)
    assert data.shape == (401, 3)
    assert np.all(data[:, 2] == 0.0)


def test_export_voltage_scale(tmp_path):
    seg = proto.WaveformSegment(1e-3, (500.0,), (0.0,), (1.0,), envelope=False)
    p = _write_protocol(tmp_path / "one.json", proto.ShakingProtocol((seg,)))
    out = tmp_path / "w.csv"
    assert _run(tmp_path, "export-waveform", "--protocol", str(p), "--out", str(out)) == EXIT_OK
    data = _csv(out)
    # cos tone of 1 rad at t = 0
    assert data[0, 1] == pytest.approx(1.0)
    assert data[0, 2] == pytest.approx(0.03351, abs=5e-6)
    assert data[0, 2] == pytest.approx(1.0 / (0.746 * 40.0), rel=1e-12)


def test_export_round_trip(optimized, tmp_path):
    out = tmp_path / "w.csv"
    src = optimized / "protocol_n1.json"
    assert _run(tmp_path, "export-waveform", "--protocol", str(src), "--out", str(out)) == EXIT_OK
    data = _csv(out)
    expected = proto.load(src).phase(data[:, 0])
    np.testing.assert_allclose(data[:, 1], expected, atol=1e-12)
    np.testing.assert_allclose(data[:, 2] * 0.746 * 40.0, data[:, 1], atol=1e-12)


def test_export_out_of_range(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sensing": {"awg_range": 0.05}}))
    seg = proto.WaveformSegment(1e-3, (500.0,), (0.0,), (3.0,), envelope=False)
    p = _write_protocol(tmp_path / "big.json", proto.ShakingProtocol((seg,)))
    assert _run(tmp_path, "export-waveform", "--protocol", str(p), config=cfg) == EXIT_NUMERICAL
    assert "exceeds" in capsys.readouterr().err


def test_export_undersampled(tmp_path):
    seg = proto.WaveformSegment(1e-3, (25e3,), (0.0,), (1.0,))
    p = _write_protocol(tmp_path / "fast.json", proto.ShakingProtocol((seg,)))
    assert _run(tmp_path, "export-waveform", "--protocol", str(p), "--sample-rate", "4e4") \
        == EXIT_USAGE


def test_fit_command(tmp_path):
    t = np.array([0.4, 0.8, 1.2, 1.6, 2.0]) * 1e-3
    d = 2e-6 * t ** -2.0
    table = tmp_path / "sens.tsv"
    table.write_text("# synthetic\nT_I\tdelta_a\n" + "".join(f"{a!r}\t{b!r}\n" for a, b in zip(t.tolist(), d.tolist())))
    out = tmp_path / "fit.json"
    assert _run(tmp_path, "fit", "--table", str(table), "--c-mode", "0", "--out", str(out)) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["b"] == pytest.approx(2.0, abs=1e-8)
    assert doc["config_hash"] == ExperimentConfig().hash()


def test_fit_non_numeric_table(tmp_path):
    table = tmp_path / "sens.tsv"
    table.write_text("T_I\tdelta_a\n1\tx\n2\t0.5\n3\t0.3\n")
    assert _run(tmp_path, "fit", "--table", str(table)) == EXIT_USAGE


def test_fit_bad_c_mode(tmp_path):
    table = tmp_path / "sens.tsv"
    table.write_text("T_I\tdelta_a\n1\t1\n2\t0.5\n3\t0.3\n")
    assert _run(tmp_path, "fit", "--table", str(table), "--c-mode", "maybe") == EXIT_USAGE


def test_ground_state(tmp_path, capsys):
    assert _run(tmp_path, "ground-state") == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert sum(report["populations"]) + report["leak"] == pytest.approx(1.0)
    assert 18e3 < report["band_gap_01_hz"] < 30e3


def test_unknown_config_keys_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lattice": {"depht": 10.0}}))
    assert _run(tmp_path, "ground-state", config=cfg) == EXIT_USAGE
    assert "depht" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        config_from_dict({"extra": 1})


def test_shipped_configs_load():
    for name in ("default.json", "calibrated_noise.json"):
        cfg = load_config(CONFIGS / name)
        assert cfg.hash() == load_config(CONFIGS / name).hash()
    assert load_config(CONFIGS / "calibrated_noise.json").sensing.noise is not None


def test_config_hash_tracks_content():
    a = config_from_dict({"seed": 0})
    b = config_from_dict({"seed": 1})
    assert a.hash() == ExperimentConfig().hash()
    assert a.hash() != b.hash()

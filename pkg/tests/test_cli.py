"""CLI behaviour: flags, exit codes, idempotent reports."""
import os

import pytest

from edgeloop.cli import main
from edgeloop.runtime import DEFAULT_EPOCH_MS


def test_missing_command_errors():
    with pytest.raises(SystemExit):
        main([])


def test_run_missing_config_exit_1(capsys):
    code = main(["run", "--config", "/nope/none.xml", "--id", "edge"])
    assert code == 1
    assert "--config" in capsys.readouterr().err


def test_run_bad_config_exit_1(tmp_path, capsys):
    config = tmp_path / "bad.xml"
    config.write_text("<Module><X/></Module>")
    code = main(["run", "--config", str(config), "--id", "edge"])
    assert code == 1


def test_run_for_short_duration(tmp_path):
    config = tmp_path / "collect.xml"
    config.write_text(f"""
<Module class="BatteryCollector" id="batt">
    <Rate>1</Rate>
    <Output>B</Output>
</Module>
<Module class="DataSaverModule" id="saver">
    <save><What>B</What><StoragePath>{tmp_path}/data</StoragePath></save>
</Module>
""")
    code = main(["run", "--config", str(config), "--id", "edge",
                 "--time-scale", "600", "--run-for", "2m"])
    assert code == 0
    rec_dir = tmp_path / "data" / "B"
    assert rec_dir.is_dir() and len(list(rec_dir.iterdir())) >= 1


@pytest.fixture
def recorded_dir(tmp_path):
    config = tmp_path / "collect.xml"
    config.write_text(f"""
<Module class="BatteryCollector" id="batt">
    <Rate>1/4</Rate>
    <Output>BatteryData</Output>
</Module>
<Module class="DataSaverModule" id="saver">
    <save><What>BatteryData</What><StoragePath>{tmp_path}/data</StoragePath></save>
</Module>
""")
    assert main(["run", "--config", str(config), "--id", "edge",
                 "--time-scale", "2000", "--run-for", "1h"]) == 0
    rates = tmp_path / "rates.csv"
    rates.write_text("sensor_id,rate_hz\nBattery,1/4\n")
    return tmp_path


def test_coverage_report_and_idempotence(recorded_dir):
    out_csv = recorded_dir / "coverage.csv"
    argv = ["coverage", "--data-dir", str(recorded_dir / "data"),
            "--rates", str(recorded_dir / "rates.csv"),
            "--out-csv", str(out_csv), "--hours", "1"]
    assert main(argv) == 0
    first = out_csv.read_bytes()
    assert b"Battery,0,900,900,100.0" in first
    # figures rendered alongside the delimited output
    assert (recorded_dir / "coverage.png").exists()
    assert main(argv) == 0
    assert out_csv.read_bytes() == first


def test_coverage_missing_data_dir(capsys):
    code = main(["coverage", "--data-dir", "/nope", "--rates", "/nope.csv",
                 "--out-csv", "/tmp/x.csv"])
    assert code == 1
    assert "--data-dir" in capsys.readouterr().err


def test_mlloop_requires_dataset(tmp_path, capsys):
    code = main(["mlloop", "--dataset-dir", str(tmp_path), "--out-dir", str(tmp_path / "out")])
    assert code == 1
    assert "labels.csv" in capsys.readouterr().err


def test_mlloop_generate_and_run(tmp_path):
    dataset = tmp_path / "dataset"
    out = tmp_path / "out"
    code = main(["mlloop", "--dataset-dir", str(dataset), "--out-dir", str(out),
                 "--generate", "--files", "8", "--events", "9"])
    assert code == 0
    for name in ("per_file.csv", "metrics.csv", "deviation.csv", "summary.txt"):
        assert (out / name).exists()
    with open(out / "per_file.csv") as fh:
        assert len(fh.readlines()) == 9  # header + 8 files

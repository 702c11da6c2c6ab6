"""End-to-end verification loop on a reduced dataset (full set in acceptance)."""
import os

import numpy as np
import pytest

from edgeloop.mlloop.dataset import (
    DatasetSpec,
    generate_dataset,
    load_labels,
    read_signal_file,
    signal_files,
)
from edgeloop.mlloop.harness import (
    default_edge_config,
    default_server_config,
    run_mlloop,
)
from edgeloop.mlloop.models import build_ensemble, quantize_ensemble, save_ensemble
from edgeloop.report import reports_identical, write_evaluation_report


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("dataset")
    spec = DatasetSpec(n_files=24, total_events=25, seed=99, silent_lead_files=2)
    labels = generate_dataset(str(directory), spec)
    return str(directory), labels, spec


@pytest.fixture(scope="module")
def model_files(tmp_path_factory):
    directory = tmp_path_factory.mktemp("models")
    ensemble = build_ensemble(seed=2023)
    float_path = os.path.join(directory, "detector_float.model")
    quant_path = os.path.join(directory, "detector_q8.model")
    save_ensemble(float_path, ensemble)
    save_ensemble(quant_path, quantize_ensemble(ensemble, 8))
    return float_path, quant_path


def test_dataset_generation_properties(small_dataset):
    directory, labels, spec = small_dataset
    files = signal_files(directory)
    assert len(files) == spec.n_files
    assert sum(l.event_count for l in labels) == spec.total_events
    assert any(l.event_count == 0 for l in labels)
    assert max(l.event_count for l in labels) <= spec.max_events_per_file
    # labels round-trip through the CSV
    loaded = load_labels(os.path.join(directory, "labels.csv"))
    assert [(l.file_id, l.event_count, l.positions) for l in loaded] == \
        [(l.file_id, l.event_count, l.positions) for l in labels]
    # signal files decode to the advertised shape
    chunk = read_signal_file(files[0])
    assert chunk["sample_rate_hz"].value == spec.sample_rate_hz
    assert len(chunk["samples"].items) == spec.sample_rate_hz * spec.duration_s


def test_dataset_generation_deterministic(small_dataset, tmp_path):
    directory, _labels, spec = small_dataset
    again = tmp_path / "again"
    generate_dataset(str(again), spec)
    first = sorted(signal_files(directory))
    second = sorted(signal_files(str(again)))
    for a, b in zip(first, second):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()


@pytest.fixture(scope="module")
def remote_report(small_dataset, model_files, tmp_path_factory):
    directory, _labels, _spec = small_dataset
    float_path, quant_path = model_files
    from edgeloop.mlloop.harness import _free_port
    port = _free_port()
    server_config = default_server_config(directory, port)
    edge_config = default_edge_config(f"127.0.0.1:{port}", float_path, quant_path)
    out_dir = str(tmp_path_factory.mktemp("report_remote"))
    report = run_mlloop(edge_config, server_config, out_dir=out_dir, timeout_s=300)
    return report, out_dir, edge_config, server_config


def test_remote_run_covers_all_files(remote_report, small_dataset):
    report, _out, _e, _s = remote_report
    _dir, labels, spec = small_dataset
    assert len(report.rows) == spec.n_files
    assert report.missing_files == []


def test_detector_finds_planted_events(remote_report):
    report, _out, _e, _s = remote_report
    # the seeded ensemble is a real detector on this synthetic set
    assert report.confusion.tp > 0
    assert report.metrics.sensitivity is not None and report.metrics.sensitivity > 0.8
    assert report.metrics.specificity is not None and report.metrics.specificity > 0.8


def test_float_vs_quantized_deviation(remote_report):
    report, _out, _e, _s = remote_report
    assert report.deviation.different_values > 0
    assert np.isfinite(report.deviation.max_difference)
    assert report.deviation.max_difference < 0.05
    assert report.deviation.equal_values + report.deviation.different_values \
        == report.deviation.total_values


def test_threshold_robustness_on_margin_files(remote_report):
    report, _out, _e, _s = remote_report
    assert len(report.robust_files) > 0
    assert report.counts_equal_everywhere_robust()


def test_report_files_written(remote_report):
    _report, out_dir, _e, _s = remote_report
    for name in ("per_file.csv", "metrics.csv", "deviation.csv", "summary.txt",
                 "counts_scatter.png", "deviation_hist.png"):
        assert os.path.exists(os.path.join(out_dir, name)), name


def test_local_equals_remote(remote_report, tmp_path):
    report_remote, out_remote, edge_config, server_config = remote_report
    out_local = str(tmp_path / "report_local")
    report_local = run_mlloop(edge_config, server_config,
                              out_dir=out_local, local=True, timeout_s=300)
    same, reason = reports_identical(out_remote, out_local)
    assert same, reason


def test_same_model_both_variants_all_equal(small_dataset, model_files, tmp_path):
    directory, _labels, _spec = small_dataset
    float_path, _quant = model_files
    from edgeloop.mlloop.harness import _free_port
    port = _free_port()
    server_config = default_server_config(directory, port)
    edge_config = default_edge_config(f"127.0.0.1:{port}", float_path, float_path)
    report = run_mlloop(edge_config, server_config, timeout_s=300)
    assert report.deviation.equal_values == report.deviation.total_values
    assert report.deviation.max_difference == 0.0

"""Windowing, features, inference, quantization, counting, deviation."""
import math

import numpy as np
import pytest

from edgeloop.errors import DimensionMismatch, LengthMismatch, WindowLargerThanSignal
from edgeloop.mlloop.metrics import (
    ConfusionMatrix,
    DeviationReport,
    classification_metrics,
    deviation_report,
)
from edgeloop.mlloop.models import (
    ACT_SOFTMAX,
    EnsembleSpec,
    Layer,
    ModelSpec,
    build_ensemble,
    count_coughs,
    detection_runs,
    ensemble_from_wire,
    ensemble_infer,
    ensemble_to_wire,
    infer,
    quantize_ensemble,
    quantize_model,
)
from edgeloop.mlloop.windows import band_edges, band_spectrogram, sliding_windows
from edgeloop.wire import decode_exact, encode


# --- sliding windows ---

def test_window_count_small():
    windows = sliding_windows(np.ones(10), 4, 2, silence_rms_threshold=0.0)
    assert len(windows) == 4  # floor((10-4)/2)+1


def test_window_count_six_seconds_at_16k():
    signal = np.random.default_rng(0).normal(0, 1, 96_000)
    windows = sliding_windows(signal, 16_000, 2_000)
    assert len(windows) == 41  # floor(80000/2000)+1


def test_all_zero_signal_all_skipped():
    windows = sliding_windows(np.zeros(5000), 1000, 500)
    assert all(w.skipped for w in windows)


def test_window_larger_than_signal():
    with pytest.raises(WindowLargerThanSignal):
        sliding_windows(np.ones(10), 11, 1)


# --- band spectrogram ---

def test_zero_window_all_bands_zero():
    out = band_spectrogram(np.zeros(2000), 32, 8000)
    assert out.shape == (32,)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("band", [0, 3, 11, 16, 25, 31])
def test_sinusoid_at_band_center_dominates(band):
    sr, n, bands = 8000, 2000, 32
    edges = band_edges(bands, sr, 50.0)
    center = math.sqrt(edges[band] * edges[band + 1])
    t = np.arange(n) / sr
    window = np.sin(2 * np.pi * center * t)
    out = band_spectrogram(window, bands, sr)
    assert int(np.argmax(out)) == band


def test_identical_windows_identical_features():
    rng = np.random.default_rng(3)
    window = rng.normal(0, 0.1, 2000)
    a = band_spectrogram(window, 32, 8000)
    b = band_spectrogram(window.copy(), 32, 8000)
    assert a.tobytes() == b.tobytes()


# --- inference ---

def test_zero_model_softmax_symmetry():
    model = ModelSpec([Layer(np.zeros((2, 4)), np.zeros(2), ACT_SOFTMAX)])
    out = infer(model, np.ones(4))
    assert out.tolist() == [0.5, 0.5]


def test_softmax_sums_to_one():
    ensemble = build_ensemble(7)
    rng = np.random.default_rng(1)
    for _ in range(20):
        features = rng.normal(0, 2, 32)
        for model in ensemble.models:
            out = infer(model, features)
            assert abs(float(out.sum()) - 1.0) < 1e-9
            assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_dimension_mismatch():
    model = ModelSpec([Layer(np.zeros((2, 4)), np.zeros(2), ACT_SOFTMAX)])
    with pytest.raises(DimensionMismatch):
        infer(model, np.ones(5))


def test_ensemble_raw_output_shape():
    ensemble = build_ensemble(11)
    raw, prob = ensemble_infer(ensemble, np.zeros(32))
    assert raw.shape == (5, 2)  # 10 raw values per window
    assert 0.0 <= prob <= 1.0


def test_ensemble_needs_five_models():
    model = ModelSpec([Layer(np.zeros((2, 4)), np.zeros(2), ACT_SOFTMAX)])
    with pytest.raises(ValueError):
        EnsembleSpec(models=[model] * 4)


# --- cough counting ---

def test_count_coughs_hand_trace():
    probs = [0.1, 0.8, 0.9, 0.2, 0.7, 0.6, 0.1]
    assert count_coughs(probs, 0.5, 2) == 2


def test_count_coughs_zeros():
    assert count_coughs([0.0] * 10, 0.5, 2) == 0


def test_count_coughs_run_too_short():
    assert count_coughs([0.9], 0.5, 2) == 0


def test_count_coughs_matches_runs():
    rng = np.random.default_rng(5)
    for _ in range(100):
        probs = rng.random(30).tolist()
        runs = detection_runs(probs, 0.5, 2)
        assert count_coughs(probs, 0.5, 2) == len(runs)
        for start, end in runs:
            assert end - start + 1 >= 2
            assert all(p > 0.5 for p in probs[start:end + 1])


# --- quantization ---

def test_quantize_example_values():
    model = ModelSpec([
        Layer(np.array([[1.0, -0.5]]), np.zeros(1), "None"),
        Layer(np.zeros((2, 1)), np.zeros(2), ACT_SOFTMAX),
    ])
    quantized = quantize_model(model, bits=8)
    weights = quantized.layers[0].weights[0]
    assert weights[0] == pytest.approx(1.0, abs=0)
    assert weights[1] == pytest.approx(-0.5039370078740157, rel=0, abs=1e-15)


def test_quantize_zero_weights_unchanged():
    model = ModelSpec([Layer(np.zeros((2, 3)), np.zeros(2), ACT_SOFTMAX)])
    quantized = quantize_model(model)
    assert np.array_equal(quantized.layers[0].weights, model.layers[0].weights)


def test_quantize_idempotent():
    ensemble = build_ensemble(23)
    q1 = quantize_ensemble(ensemble, 8)
    q2 = quantize_ensemble(q1, 8)
    for a, b in zip(q1.models, q2.models):
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)


def test_quantized_outputs_differ_but_are_close():
    ensemble = build_ensemble(29)
    quantized = quantize_ensemble(ensemble, 8)
    rng = np.random.default_rng(2)
    any_different = False
    for _ in range(10):
        features = rng.normal(0.5, 1.0, 32)
        raw_f, _ = ensemble_infer(ensemble, features)
        raw_q, _ = ensemble_infer(quantized, features)
        if not np.array_equal(raw_f, raw_q):
            any_different = True
        assert np.max(np.abs(raw_f - raw_q)) < 0.05
    assert any_different


# --- model files ---

def test_ensemble_wire_round_trip():
    ensemble = build_ensemble(31)
    wire_value = ensemble_to_wire(ensemble)
    back = ensemble_from_wire(decode_exact(encode(wire_value)))
    assert back.threshold == ensemble.threshold
    assert back.min_run == ensemble.min_run
    for a, b in zip(ensemble.models, back.models):
        for la, lb in zip(a.layers, b.layers):
            assert la.weights.tobytes() == lb.weights.tobytes()
            assert la.bias.tobytes() == lb.bias.tobytes()
            assert la.activation == lb.activation


# --- deviation report ---

def test_deviation_identical():
    values = [0.5] * 400
    report = deviation_report(values, list(values))
    assert report == DeviationReport(400, 400, 0, 0.0, 0.0)


def test_deviation_simple_case():
    report = deviation_report([0.5, 0.25], [0.5, 0.2500001])
    assert report.total_values == 2
    assert report.equal_values == 1
    assert report.different_values == 1
    assert report.max_difference == pytest.approx(1e-7, rel=1e-6)
    assert report.mean_difference == pytest.approx(5e-8, rel=1e-6)


def test_deviation_length_mismatch():
    with pytest.raises(LengthMismatch):
        deviation_report([1.0], [1.0, 2.0])


def test_deviation_invariants():
    rng = np.random.default_rng(17)
    a = rng.random(500).tolist()
    b = [x + rng.normal(0, 1e-9) for x in a]
    report = deviation_report(a, b)
    assert report.equal_values + report.different_values == report.total_values
    assert report.max_difference >= report.mean_difference >= 0.0


# --- classification metrics ---

def brute_force_metrics(labels, predictions):
    tp = sum(1 for l, p in zip(labels, predictions) if l and p)
    fp = sum(1 for l, p in zip(labels, predictions) if not l and p)
    fn = sum(1 for l, p in zip(labels, predictions) if l and not p)
    tn = sum(1 for l, p in zip(labels, predictions) if not l and not p)
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def test_metrics_table_reproduction():
    cm = ConfusionMatrix(tp=200, fp=9, fn=66, tn=589)
    metrics = classification_metrics(cm)
    assert metrics.sensitivity == pytest.approx(0.7518796992, abs=1e-9)
    assert metrics.specificity == pytest.approx(0.9849498328, abs=1e-9)
    assert metrics.precision == pytest.approx(0.9569377990, abs=1e-9)
    assert metrics.accuracy == pytest.approx(0.9131944444, abs=1e-9)
    assert metrics.mcc == pytest.approx(0.7942635659, abs=1e-9)


def test_perfect_classifier():
    metrics = classification_metrics(ConfusionMatrix(tp=10, fp=0, fn=0, tn=20))
    assert metrics.sensitivity == 1.0
    assert metrics.specificity == 1.0
    assert metrics.precision == 1.0
    assert metrics.accuracy == 1.0
    assert metrics.mcc == 1.0


def test_undefined_sensitivity():
    metrics = classification_metrics(ConfusionMatrix(tp=0, fp=3, fn=0, tn=5))
    assert metrics.sensitivity is None
    assert "sensitivity" in metrics.undefined_fields()
    assert metrics.mcc is None  # tp+fn == 0 zeroes the mcc denominator too


def test_metrics_against_brute_force_counter():
    rng = np.random.default_rng(9)
    for _ in range(25):
        labels = rng.random(60) < 0.4
        predictions = rng.random(60) < 0.5
        cm = brute_force_metrics(labels.tolist(), predictions.tolist())
        metrics = classification_metrics(cm)
        n = len(labels)
        if metrics.accuracy is not None:
            agree = sum(1 for l, p in zip(labels, predictions) if l == p)
            assert metrics.accuracy == pytest.approx(agree / n)
        if metrics.sensitivity is not None:
            positives = [p for l, p in zip(labels, predictions) if l]
            assert metrics.sensitivity == pytest.approx(sum(positives) / len(positives))

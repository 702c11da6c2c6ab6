"""Small MLP ensemble: inference, quantization, cough counting, model files.

The detection ensemble is five two-output softmax MLPs sharing one input
dimensionality. Each model carries one engineered hidden unit tuned (on
internally generated calibration windows) to separate the planted event
band pattern from background noise, plus randomly seeded units that give
the five models slightly different raw outputs.

Model files are the wire encoding of the ensemble struct, so any peer that
speaks the wire format can load them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch
from ..wire import (
    WFloat,
    WInt,
    WList,
    WString,
    WStruct,
    decode,
    encode,
)
from .windows import band_spectrogram

ACT_RELU = "ReLU"
ACT_SOFTMAX = "Softmax"
ACT_NONE = "None"

COUGH = 1  # output index of the event class


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatch(
                f"layer shapes disagree: {self.weights.shape} vs {self.bias.shape}")
        if self.activation not in (ACT_RELU, ACT_SOFTMAX, ACT_NONE):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ModelSpec:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatch("model needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weights.shape[1] != prev.weights.shape[0]:
                raise DimensionMismatch(
                    f"layer dims {prev.weights.shape} -> {cur.weights.shape} incompatible")
        if self.layers[-1].activation != ACT_SOFTMAX:
            raise ValueError("final activation must be Softmax")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]


@dataclass
class EnsembleSpec:
    models: list[ModelSpec]
    threshold: float = 0.5
    min_run: int = 2
    # feature extraction settings travel with the model file
    window_len: int = 2000
    hop: int = 500
    bands: int = 32
    sample_rate_hz: int = 8000
    f_min: float = 50.0
    silence_rms: float = 1e-4

    def __post_init__(self):
        if len(self.models) != 5:
            raise ValueError(f"ensemble needs exactly 5 models, got {len(self.models)}")
        dims = {m.input_dim for m in self.models}
        if len(dims) != 1:
            raise DimensionMismatch(f"models disagree on input dim: {dims}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.min_run < 1:
            raise ValueError("min_run must be positive")


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / np.sum(shifted)


def infer(model: ModelSpec, features: np.ndarray) -> np.ndarray:
    """Forward pass; returns the output distribution (sums to 1)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise DimensionMismatch(
            f"features shape {x.shape} does not match input dim {model.input_dim}")
    for layer in model.layers:
        x = layer.weights @ x + layer.bias
        if layer.activation == ACT_RELU:
            x = np.maximum(x, 0.0)
        elif layer.activation == ACT_SOFTMAX:
            x = _softmax(x)
    return x


def ensemble_infer(ensemble: EnsembleSpec, features: np.ndarray
                   ) -> tuple[np.ndarray, float]:
    """Per-model output pairs plus the averaged event probability."""
    raw = np.zeros((len(ensemble.models), 2), dtype=np.float64)
    for row, model in enumerate(ensemble.models):
        raw[row] = infer(model, features)
    return raw, float(np.mean(raw[:, COUGH]))


def count_coughs(window_probs, threshold: float, min_run: int) -> int:
    """Number of maximal runs of consecutive values above the threshold with
    run length of at least min_run."""
    count = 0
    run = 0
    for prob in window_probs:
        if prob > threshold:
            run += 1
        else:
            if run >= min_run:
                count += 1
            run = 0
    if run >= min_run:
        count += 1
    return count


def detection_runs(window_probs, threshold: float, min_run: int) -> list[tuple[int, int]]:
    """(start, end) position ranges (inclusive) of each counted run."""
    runs = []
    start = None
    for position, prob in enumerate(window_probs):
        if prob > threshold:
            if start is None:
                start = position
        else:
            if start is not None and position - start >= min_run:
                runs.append((start, position - 1))
            start = None
    if start is not None and len(window_probs) - start >= min_run:
        runs.append((start, len(window_probs) - 1))
    return runs


def _quantize_tensor(tensor: np.ndarray, bits: int) -> np.ndarray:
    levels = float(2 ** (bits - 1) - 1)
    peak = float(np.max(np.abs(tensor)))
    if peak == 0.0:
        return tensor.copy()
    scale = peak / levels
    return np.round(tensor / scale) * scale


def quantize_model(model: ModelSpec, bits: int = 8) -> ModelSpec:
    """Per-tensor affine quantization of every parameter tensor.

    scale = max|w| / (2^(bits-1) - 1); stored values are round(w/scale) *
    scale. Structure is unchanged and all-zero tensors stay untouched.
    """
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    return ModelSpec([
        Layer(_quantize_tensor(layer.weights, bits),
              _quantize_tensor(layer.bias, bits),
              layer.activation)
        for layer in model.layers
    ])


def quantize_ensemble(ensemble: EnsembleSpec, bits: int = 8) -> EnsembleSpec:
    return EnsembleSpec(
        models=[quantize_model(m, bits) for m in ensemble.models],
        threshold=ensemble.threshold,
        min_run=ensemble.min_run,
        window_len=ensemble.window_len,
        hop=ensemble.hop,
        bands=ensemble.bands,
        sample_rate_hz=ensemble.sample_rate_hz,
        f_min=ensemble.f_min,
        silence_rms=ensemble.silence_rms,
    )


# --- construction ---

# Band indices the dataset generator concentrates event energy in.
EVENT_BANDS = (20, 23, 26)
EVENT_TONE_AMPLITUDE = 0.5
NOISE_SIGMA = 0.01


def event_tone_freqs(bands: int, sample_rate_hz: int, f_min: float) -> list[float]:
    from .windows import band_edges
    edges = band_edges(bands, sample_rate_hz, f_min)
    return [float(np.sqrt(edges[b] * edges[b + 1])) for b in EVENT_BANDS]


def _calibration_features(window_len: int, hop: int, bands: int,
                          sample_rate_hz: int, f_min: float,
                          seed: int = 0xC0FFEE) -> tuple[np.ndarray, np.ndarray]:
    """Noise-window and event-window feature samples used to aim the
    engineered hidden unit. Uses the same synthesis as the dataset
    generator, from a fixed internal seed."""
    rng = np.random.default_rng(seed)
    t = np.arange(window_len) / sample_rate_hz
    tone = np.zeros(window_len)
    for freq in event_tone_freqs(bands, sample_rate_hz, f_min):
        tone += np.sin(2.0 * np.pi * freq * t)
    tone *= EVENT_TONE_AMPLITUDE / len(EVENT_BANDS)
    noise_rows = []
    event_rows = []
    for _ in range(48):
        noise = rng.normal(0.0, NOISE_SIGMA, window_len)
        noise_rows.append(band_spectrogram(noise, bands, sample_rate_hz, f_min))
        event_rows.append(band_spectrogram(noise + tone, bands, sample_rate_hz, f_min))
    return np.array(noise_rows), np.array(event_rows)


def build_ensemble(seed: int, input_dim: int = 32, hidden: int = 16,
                   threshold: float = 0.5, min_run: int = 2,
                   window_len: int = 2000, hop: int = 500,
                   sample_rate_hz: int = 8000, f_min: float = 50.0,
                   silence_rms: float = 1e-4) -> EnsembleSpec:
    """Five seeded detector models around one shared calibrated direction."""
    noise_rows, event_rows = _calibration_features(
        window_len, hop, input_dim, sample_rate_hz, f_min)
    direction = event_rows.mean(axis=0) - noise_rows.mean(axis=0)
    direction = direction / np.linalg.norm(direction)
    mid = 0.5 * (event_rows @ direction).mean() + 0.5 * (noise_rows @ direction).mean()
    spread = (event_rows @ direction).mean() - (noise_rows @ direction).mean()
    gain = 8.0 / spread  # detector unit swings about +-4 across the midpoint

    models = []
    for model_index in range(5):
        rng = np.random.default_rng((seed, model_index))
        w1 = rng.normal(0.0, 0.01, (hidden, input_dim))
        b1 = rng.normal(0.0, 0.01, hidden)
        w1[0] = direction * gain
        b1[0] = -mid * gain + 4.0  # detector unit: ~0 on noise, ~8 on events
        w2 = rng.normal(0.0, 0.02, (2, hidden))
        b2 = rng.normal(0.0, 0.02, 2)
        w2[COUGH, 0] = 1.2
        w2[1 - COUGH, 0] = -1.2
        b2[COUGH] -= 4.8  # noise windows sit firmly on the non-event side
        models.append(ModelSpec([
            Layer(w1, b1, ACT_RELU),
            Layer(w2, b2, ACT_SOFTMAX),
        ]))
    return EnsembleSpec(
        models=models, threshold=threshold, min_run=min_run,
        window_len=window_len, hop=hop, bands=input_dim,
        sample_rate_hz=sample_rate_hz, f_min=f_min, silence_rms=silence_rms)


# --- model files (wire encoding) ---

def _layer_to_wire(layer: Layer) -> WStruct:
    rows, cols = layer.weights.shape
    return WStruct("Layer", {
        "rows": WInt(rows),
        "cols": WInt(cols),
        "weights": WList([WFloat(v) for v in layer.weights.reshape(-1).tolist()]),
        "bias": WList([WFloat(v) for v in layer.bias.tolist()]),
        "activation": WString(layer.activation),
    })


def _layer_from_wire(value: WStruct) -> Layer:
    rows = value["rows"].value
    cols = value["cols"].value
    weights = np.array([w.value for w in value["weights"].items],
                       dtype=np.float64).reshape(rows, cols)
    bias = np.array([b.value for b in value["bias"].items], dtype=np.float64)
    return Layer(weights, bias, value["activation"].value)


def ensemble_to_wire(ensemble: EnsembleSpec) -> WStruct:
    return WStruct("Ensemble", {
        "threshold": WFloat(ensemble.threshold),
        "min_run": WInt(ensemble.min_run),
        "window_len": WInt(ensemble.window_len),
        "hop": WInt(ensemble.hop),
        "bands": WInt(ensemble.bands),
        "sample_rate_hz": WInt(ensemble.sample_rate_hz),
        "f_min": WFloat(ensemble.f_min),
        "silence_rms": WFloat(ensemble.silence_rms),
        "models": WList([
            WStruct("Model", {"layers": WList([_layer_to_wire(l) for l in m.layers])})
            for m in ensemble.models
        ]),
    })


def ensemble_from_wire(value: WStruct) -> EnsembleSpec:
    return EnsembleSpec(
        models=[
            ModelSpec([_layer_from_wire(l) for l in model["layers"].items])
            for model in value["models"].items
        ],
        threshold=value["threshold"].value,
        min_run=value["min_run"].value,
        window_len=value["window_len"].value,
        hop=value["hop"].value,
        bands=value["bands"].value,
        sample_rate_hz=value["sample_rate_hz"].value,
        f_min=value["f_min"].value,
        silence_rms=value["silence_rms"].value,
    )


def save_ensemble(path: str, ensemble: EnsembleSpec) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(ensemble_to_wire(ensemble)))


def load_ensemble(path: str) -> EnsembleSpec:
    with open(path, "rb") as fh:
        value, _ = decode(fh.read())
    return ensemble_from_wire(value)

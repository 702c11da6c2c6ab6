"""Channel-facing modules of the verification loop.

CoughEnsembleModule runs the windowing + band features + ensemble pipeline
on incoming audio and posts one DetectionResult per file. EvaluatorModule
streams labeled files in lock-step (the next file goes out only after every
result channel answered the previous one) and collects raw outputs for
deviation analysis.
"""
from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidProperty
from ..runtime import Module
from ..wire import WInt, WList, WString, WStruct, float_list
from .dataset import LabelRow, load_labels, read_signal_file, signal_files
from .models import count_coughs, ensemble_infer, load_ensemble
from .windows import extract_features

log = logging.getLogger(__name__)

RESULT_TYPE = "DetectionResult"
AUDIO_TYPE = "AudioChunk"


class CoughEnsembleModule(Module):
    """Sliding-window band-spectrum ensemble inference on an audio channel.

    Properties:
        Model   path to an ensemble model file (feature settings included)
        Input   audio channel (default "AudioData")
        Output  result channel (default "DetectedCoughs")
    """

    def __init__(self):
        super().__init__()
        self.files_processed = 0

    def initialize(self):
        model_path = self.prop("Model")
        if not model_path:
            raise InvalidProperty("CoughEnsembleModule needs a Model path")
        if not os.path.exists(model_path):
            raise InvalidProperty(f"model file not found: {model_path}")
        self.ensemble = load_ensemble(str(model_path))
        self._result = self.publish(str(self.prop("Output", "DetectedCoughs")), RESULT_TYPE)
        self.subscribe(str(self.prop("Input", "AudioData")), AUDIO_TYPE, self._on_audio)

    def _on_audio(self, chunk: WStruct):
        ensemble = self.ensemble
        file_id = chunk.get("id")
        if file_id is None:  # live chunks carry a start time instead of an id
            file_id = WString(str(chunk.get("start_ms", WInt(0)).value))
        signal = np.array([s.value for s in chunk["samples"].items], dtype=np.float64)
        indices, features, total, skipped = extract_features(
            signal, ensemble.window_len, ensemble.hop, ensemble.bands,
            ensemble.sample_rate_hz, ensemble.f_min, ensemble.silence_rms)
        probs = []
        raw_flat = []
        for row in range(features.shape[0]):
            raw, prob = ensemble_infer(ensemble, features[row])
            probs.append(prob)
            raw_flat.extend(raw.reshape(-1).tolist())
        count = count_coughs(probs, ensemble.threshold, ensemble.min_run)
        self._result.post(WStruct(RESULT_TYPE, {
            "id": file_id,
            "count": WInt(count),
            "probs": float_list(probs),
            "window_indices": WList([WInt(i) for i in indices]),
            "raw": float_list(raw_flat),
            "windows_total": WInt(total),
            "windows_skipped": WInt(skipped),
        }))
        self.files_processed += 1


class CoughReportModule(Module):
    """Appends per-file detection counts to a CSV (deployment-config sink)."""

    def __init__(self):
        super().__init__()
        self.counts: list[tuple[str, int]] = []

    def initialize(self):
        self._path = str(self.prop("OutputPath", "cough_counts.csv"))
        self.subscribe(str(self.prop("Input", "DetectedCoughs")), RESULT_TYPE, self._on_result)
        directory = os.path.dirname(self._path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self._path, "w", encoding="utf-8") as fh:
            fh.write("file,cough_count\n")

    def _on_result(self, result: WStruct):
        file_id = result["id"].value
        count = result["count"].value
        self.counts.append((file_id, count))
        with open(self._path, "a", encoding="utf-8") as fh:
            fh.write(f"{file_id},{count}\n")


@dataclass
class CollectedResult:
    file_id: str
    results: dict[str, WStruct] = field(default_factory=dict)  # channel -> result
    posted_ms: int = 0
    missing: bool = False


class EvaluatorModule(Module):
    """Streams the dataset over "AudioData" and gathers per-variant results.

    Properties:
        DatasetDir      directory of .sig files + labels.csv
        ResultChannels  comma-separated result channels (default
                        "DetectedCoughs,DetectedCoughsQ")
        AudioChannel    output channel (default "AudioData")
        TimeoutMs       per-file virtual deadline (default 60000); files
                        unanswered by then are recorded missing and the
                        evaluation continues
    """

    def __init__(self):
        super().__init__()
        self.collected: list[CollectedResult] = []
        self.labels: list[LabelRow] = []
        self.done = threading.Event()
        self._files: list[str] = []
        self._cursor = -1

    def initialize(self):
        dataset_dir = str(self.prop("DatasetDir", ""))
        if not os.path.isdir(dataset_dir):
            raise InvalidProperty(f"DatasetDir not found: {dataset_dir}")
        self._files = signal_files(dataset_dir)
        if not self._files:
            raise InvalidProperty(f"no signal files in {dataset_dir}")
        self.labels = load_labels(os.path.join(dataset_dir, "labels.csv"))
        channels = str(self.prop("ResultChannels", "DetectedCoughs,DetectedCoughsQ"))
        self._result_channels = [c.strip() for c in channels.split(",") if c.strip()]
        self._timeout_ms = int(self.prop("TimeoutMs", 60_000))
        self._audio_channel = str(self.prop("AudioChannel", "AudioData"))
        self._audio = self.publish(self._audio_channel, AUDIO_TYPE)
        for channel in self._result_channels:
            self.subscribe(channel, RESULT_TYPE,
                           lambda result, c=channel: self._on_result(c, result))
        self.register_periodic(100, self._drive)

    # -- lock-step driver --

    def _pipeline_ready(self) -> bool:
        if not self.runtime.has_any_subscriber(self._audio_channel):
            return False
        return all(self.runtime.has_any_publisher(c) for c in self._result_channels)

    def _post_next(self):
        self._cursor += 1
        if self._cursor >= len(self._files):
            self.done.set()
            return
        path = self._files[self._cursor]
        chunk = read_signal_file(path)
        self.collected.append(CollectedResult(
            file_id=chunk["id"].value, posted_ms=self.clock.now_ms()))
        self._audio.post(chunk)

    def _drive(self):
        if self.done.is_set():
            return
        if self._cursor < 0:
            if self._pipeline_ready():
                self._post_next()
            return
        current = self.collected[self._cursor]
        if len(current.results) >= len(self._result_channels):
            return  # advanced by the result callback already
        if self.clock.now_ms() - current.posted_ms > self._timeout_ms:
            log.warning("file %s unanswered, recording as missing", current.file_id)
            current.missing = True
            self._post_next()

    def _on_result(self, channel: str, result: WStruct):
        if self._cursor < 0 or self.done.is_set():
            return
        current = self.collected[self._cursor]
        if result["id"].value != current.file_id or current.missing:
            return
        current.results[channel] = result
        if len(current.results) == len(self._result_channels):
            self._post_next()

    def wait_done(self, timeout: float) -> bool:
        return self.done.wait(timeout)

    @property
    def result_channels(self) -> list[str]:
        return list(self._result_channels)

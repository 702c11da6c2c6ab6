"""Orchestration of the verification loop and its evaluation report.

A run boots a server instance (evaluator) and an edge instance (two
inference variants, typically float reference vs 8-bit quantized) from XML
configs, streams the dataset in lock-step, and produces:

  - per-file cough counts for both variants against ground truth,
  - a confusion matrix and metrics for the reference variant, scored on
    one-second slots (an event slot counts as hit when a detected run's
    center falls in it),
  - a value-level deviation report between the two variants' raw model
    outputs,
  - a per-file threshold-robustness check: when no window's averaged
    probability sits closer to the threshold than the variants' largest
    probability deviation, both variants must count the same events.
"""
from __future__ import annotations

import os
import socket
import time
from dataclasses import dataclass, field
from typing import Optional

from ..config import load_modules, parse_config
from ..errors import EdgeLoopError
from ..runtime import Runtime, create_runtime
from .dataset import LabelRow
from .metrics import (
    ConfusionMatrix,
    DeviationReport,
    MetricsReport,
    classification_metrics,
    deviation_report,
)
from .models import detection_runs
from .modules import CollectedResult, EvaluatorModule

NETWORK_CLASSES = {"NetworkServerModule", "NetworkClientModule"}


@dataclass
class FileResult:
    file_id: str
    actual_events: int
    count_a: Optional[int]
    count_b: Optional[int]
    windows_total: int
    windows_skipped: int
    missing: bool
    margin_holds: bool = False
    max_prob_deviation: float = 0.0


@dataclass
class EvaluationReport:
    channel_a: str
    channel_b: str
    rows: list[FileResult]
    confusion: ConfusionMatrix
    metrics: MetricsReport
    deviation: DeviationReport
    missing_files: list[str] = field(default_factory=list)
    elapsed_real_s: float = 0.0

    @property
    def robust_files(self) -> list[FileResult]:
        return [r for r in self.rows if r.margin_holds and not r.missing]

    def counts_equal_everywhere_robust(self) -> bool:
        return all(r.count_a == r.count_b for r in self.robust_files)


def _free_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


def default_server_config(dataset_dir: str, port: int,
                          result_channels: str = "DetectedCoughs,DetectedCoughsQ",
                          timeout_ms: int = 60_000) -> str:
    return f"""
<Module class="NetworkServerModule" id="net_server">
    <Port>{port}</Port>
</Module>
<Module class="EvaluatorModule" id="evaluator">
    <DatasetDir>{dataset_dir}</DatasetDir>
    <ResultChannels>{result_channels}</ResultChannels>
    <TimeoutMs>{timeout_ms}</TimeoutMs>
</Module>
"""


def default_edge_config(server: str, model_a: str, model_b: str) -> str:
    return f"""
<Module class="NetworkClientModule" id="net_client">
    <ConnectTo>{server}</ConnectTo>
    <RetryIntervalMs>200</RetryIntervalMs>
</Module>
<Module class="CoughEnsembleModule" id="detector_a">
    <Model>{model_a}</Model>
    <Input>AudioData</Input>
    <Output>DetectedCoughs</Output>
</Module>
<Module class="CoughEnsembleModule" id="detector_b">
    <Model>{model_b}</Model>
    <Input>AudioData</Input>
    <Output>DetectedCoughsQ</Output>
</Module>
"""


def _slots_of_file(result, sample_rate_hz: int, hop: int, window_len: int) -> int:
    total = result["windows_total"].value
    length = (total - 1) * hop + window_len
    return max(1, length // sample_rate_hz)


def _detected_slots(result, threshold: float, min_run: int,
                    sample_rate_hz: int, hop: int, window_len: int) -> set[int]:
    probs = [p.value for p in result["probs"].items]
    indices = [i.value for i in result["window_indices"].items]
    slots = set()
    for start, end in detection_runs(probs, threshold, min_run):
        center_position = (start + end) // 2
        window_index = indices[center_position]
        center_sample = window_index * hop + window_len // 2
        slots.add(center_sample // sample_rate_hz)
    return slots


def build_report(evaluator: EvaluatorModule, labels: list[LabelRow],
                 channel_a: str, channel_b: str,
                 threshold: float, min_run: int,
                 sample_rate_hz: int, hop: int, window_len: int,
                 elapsed_real_s: float = 0.0) -> EvaluationReport:
    label_by_id = {l.file_id: l for l in labels}
    rows: list[FileResult] = []
    missing: list[str] = []
    tp = fp = fn = tn = 0
    raw_a: list[float] = []
    raw_b: list[float] = []
    for item in evaluator.collected:
        label = label_by_id.get(item.file_id)
        actual = label.event_count if label else 0
        result_a = item.results.get(channel_a)
        result_b = item.results.get(channel_b)
        if item.missing or result_a is None or result_b is None:
            missing.append(item.file_id)
            rows.append(FileResult(item.file_id, actual, None, None, 0, 0, True))
            continue
        probs_a = [p.value for p in result_a["probs"].items]
        probs_b = [p.value for p in result_b["probs"].items]
        margin = max((abs(a - b) for a, b in zip(probs_a, probs_b)), default=0.0)
        margin_holds = all(abs(p - threshold) >= margin for p in probs_a)
        rows.append(FileResult(
            file_id=item.file_id,
            actual_events=actual,
            count_a=result_a["count"].value,
            count_b=result_b["count"].value,
            windows_total=result_a["windows_total"].value,
            windows_skipped=result_a["windows_skipped"].value,
            missing=False,
            margin_holds=margin_holds,
            max_prob_deviation=margin,
        ))
        raw_a.extend(v.value for v in result_a["raw"].items)
        raw_b.extend(v.value for v in result_b["raw"].items)

        slots = _slots_of_file(result_a, sample_rate_hz, hop, window_len)
        actual_slots = {min(p // sample_rate_hz, slots - 1) for p in (label.positions if label else [])}
        detected = _detected_slots(result_a, threshold, min_run,
                                   sample_rate_hz, hop, window_len)
        detected = {min(s, slots - 1) for s in detected}
        tp += len(actual_slots & detected)
        fp += len(detected - actual_slots)
        fn += len(actual_slots - detected)
        tn += slots - len(actual_slots | detected)

    confusion = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
    return EvaluationReport(
        channel_a=channel_a,
        channel_b=channel_b,
        rows=rows,
        confusion=confusion,
        metrics=classification_metrics(confusion),
        deviation=deviation_report(raw_a, raw_b),
        missing_files=missing,
        elapsed_real_s=elapsed_real_s,
    )


def _load_ensemble_meta(edge_config_text: str):
    """Threshold and feature geometry from the first detector's model file."""
    from .models import load_ensemble
    config = parse_config(edge_config_text)
    for module in config.modules:
        if module.class_name == "CoughEnsembleModule":
            return load_ensemble(str(module.properties["Model"]))
    raise EdgeLoopError("edge config has no CoughEnsembleModule")


def run_mlloop(edge_config_text: str, server_config_text: str,
               out_dir: Optional[str] = None, local: bool = False,
               timeout_s: float = 900.0) -> EvaluationReport:
    """Run the loop from config texts; returns (and optionally writes) the report."""
    from ..config import default_module_registry
    registry = default_module_registry()
    ensemble = _load_ensemble_meta(edge_config_text)
    started = time.monotonic()

    runtimes: list[Runtime] = []
    try:
        if local:
            solo = create_runtime("solo", 1.0, module_registry=registry)
            runtimes.append(solo)
            merged = []
            for text in (edge_config_text, server_config_text):
                config = parse_config(text)
                merged.extend(m for m in config.modules
                              if m.class_name not in NETWORK_CLASSES)
            from ..config import HostConfig
            load_modules(solo, HostConfig(merged))
            solo.start()
            evaluator_rt = solo
        else:
            server_rt = create_runtime("server", 1.0, module_registry=registry)
            runtimes.append(server_rt)
            load_modules(server_rt, parse_config(server_config_text))
            server_rt.start()
            edge_rt = create_runtime("edge", 1.0, module_registry=registry)
            runtimes.append(edge_rt)
            load_modules(edge_rt, parse_config(edge_config_text))
            edge_rt.start()
            evaluator_rt = server_rt

        evaluator = None
        for handle in evaluator_rt.handles():
            if isinstance(handle.module, EvaluatorModule):
                evaluator = handle.module
        if evaluator is None:
            raise EdgeLoopError("server config has no EvaluatorModule")
        if not evaluator.wait_done(timeout_s):
            raise TimeoutError("evaluation did not finish in time")
        evaluator_rt.drain()

        channels = evaluator.result_channels
        report = build_report(
            evaluator, evaluator.labels,
            channel_a=channels[0],
            channel_b=channels[-1],
            threshold=ensemble.threshold,
            min_run=ensemble.min_run,
            sample_rate_hz=ensemble.sample_rate_hz,
            hop=ensemble.hop,
            window_len=ensemble.window_len,
            elapsed_real_s=time.monotonic() - started,
        )
    finally:
        for rt in runtimes:
            rt.stop()

    if out_dir:
        from ..report import write_evaluation_report
        write_evaluation_report(report, out_dir)
    return report

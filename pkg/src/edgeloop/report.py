"""Report rendering: delimited output plus matplotlib figures.

All files are written atomically (temp file + rename) so an interrupted run
never leaves a partial report, and reruns over identical inputs produce
byte-identical delimited files.
"""
from __future__ import annotations

import csv
import os
import tempfile
from typing import Iterable, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .mlloop.harness import EvaluationReport  # noqa: E402
from .mlloop.metrics import ConfusionMatrix, DeviationReport, MetricsReport  # noqa: E402
from .sensing.coverage import ArrivalCurvePoint, CoverageRow  # noqa: E402


def format_value(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_atomic_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_atomic_csv(path: str, header: list[str], rows: Iterable[Iterable]) -> None:
    import io
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    write_atomic_text(path, buffer.getvalue())


def _save_figure(figure, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp.png"
    figure.savefig(tmp, dpi=110)
    plt.close(figure)
    os.replace(tmp, path)


# --- coverage experiment ---

def write_coverage_csv(rows: list[CoverageRow], path: str) -> None:
    write_atomic_csv(
        path,
        ["sensor_id", "hour", "expected", "received", "coverage_pct"],
        ((r.sensor_id, r.hour, r.expected, r.received, r.coverage_pct) for r in rows),
    )


def coverage_figure(rows: list[CoverageRow], path: str) -> None:
    sensors = sorted({r.sensor_id for r in rows})
    hours = sorted({r.hour for r in rows})
    figure, axis = plt.subplots(figsize=(10, 4.5))
    for sensor in sensors:
        series = [r.coverage_pct for r in rows if r.sensor_id == sensor]
        axis.plot(hours, series, marker="o", markersize=2.5, label=sensor)
    axis.set_xlabel("hour")
    axis.set_ylabel("coverage [%]")
    axis.set_ylim(0, 105)
    axis.set_title("Sampling coverage per sensor and hour")
    axis.legend(fontsize=7, ncol=3)
    axis.grid(alpha=0.3)
    _save_figure(figure, path)


def write_arrival_csv(points: list[ArrivalCurvePoint], path: str) -> None:
    write_atomic_csv(
        path,
        ["sensor_id", "minute", "cumulative_pct"],
        ((p.sensor_id, p.minute, p.cumulative_pct) for p in points),
    )


def arrival_figure(points: list[ArrivalCurvePoint], path: str,
                   disconnect_windows: Optional[list[tuple[float, float]]] = None) -> None:
    sensors = sorted({p.sensor_id for p in points})
    figure, axis = plt.subplots(figsize=(10, 4.5))
    for sensor in sensors:
        series = [(p.minute / 60.0, p.cumulative_pct) for p in points if p.sensor_id == sensor]
        axis.plot([s[0] for s in series], [s[1] for s in series], label=sensor, linewidth=1.2)
    for window in disconnect_windows or []:
        axis.axvspan(window[0], window[1], color="0.85", zorder=0)
    axis.set_xlabel("virtual hour")
    axis.set_ylabel("received [% of expected total]")
    axis.set_title("Data arrival times per sensor (shaded: link down)")
    axis.legend(fontsize=7, ncol=3, loc="lower right")
    axis.grid(alpha=0.3)
    _save_figure(figure, path)


# --- evaluation loop ---

def write_metrics_csv(confusion: ConfusionMatrix, metrics: MetricsReport, path: str) -> None:
    rows = [
        ("tp", confusion.tp),
        ("fp", confusion.fp),
        ("fn", confusion.fn),
        ("tn", confusion.tn),
        ("sensitivity", metrics.sensitivity),
        ("specificity", metrics.specificity),
        ("precision", metrics.precision),
        ("accuracy", metrics.accuracy),
        ("mcc", metrics.mcc),
    ]
    write_atomic_csv(path, ["metric", "value"], rows)


def write_deviation_csv(deviation: DeviationReport, path: str) -> None:
    rows = [
        ("total_values", deviation.total_values),
        ("equal_values", deviation.equal_values),
        ("different_values", deviation.different_values),
        ("max_difference", deviation.max_difference),
        ("mean_difference", deviation.mean_difference),
    ]
    write_atomic_csv(path, ["field", "value"], rows)


def evaluation_summary_text(report: EvaluationReport) -> str:
    m = report.metrics
    d = report.deviation
    lines = [
        f"Detection metrics ({report.channel_a} vs ground truth)",
        f"  Sensitivity  {format_value(m.sensitivity)}",
        f"  Specificity  {format_value(m.specificity)}",
        f"  Precision    {format_value(m.precision)}",
        f"  Accuracy     {format_value(m.accuracy)}",
        f"  MCC          {format_value(m.mcc)}",
        "",
        f"Deviations in model outputs ({report.channel_a} vs {report.channel_b})",
        f"  Number of values  {d.total_values}",
        f"  Equal values      {d.equal_values}",
        f"  Different values  {d.different_values}",
        f"  Max difference    {format_value(d.max_difference)}",
        f"  Mean difference   {format_value(d.mean_difference)}",
        "",
        f"Files evaluated     {len(report.rows)}",
        f"Files missing       {len(report.missing_files)}",
    ]
    return "\n".join(lines) + "\n"


def write_evaluation_report(report: EvaluationReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_atomic_csv(
        os.path.join(out_dir, "per_file.csv"),
        ["file", "events", "count_a", "count_b", "windows", "skipped", "missing"],
        ((r.file_id, r.actual_events, r.count_a, r.count_b,
          r.windows_total, r.windows_skipped, int(r.missing)) for r in report.rows),
    )
    write_metrics_csv(report.confusion, report.metrics,
                      os.path.join(out_dir, "metrics.csv"))
    write_deviation_csv(report.deviation, os.path.join(out_dir, "deviation.csv"))
    write_atomic_text(os.path.join(out_dir, "summary.txt"),
                      evaluation_summary_text(report))
    write_atomic_text(os.path.join(out_dir, "run_info.txt"),
                      f"elapsed_real_s={report.elapsed_real_s!r}\n")
    evaluation_figures(report, out_dir)


def evaluation_figures(report: EvaluationReport, out_dir: str) -> None:
    rows = [r for r in report.rows if not r.missing]
    figure, axis = plt.subplots(figsize=(5.5, 5))
    actual = [r.actual_events for r in rows]
    detected = [r.count_a for r in rows]
    axis.scatter(actual, detected, s=14, alpha=0.35)
    top = max(actual + detected + [1])
    axis.plot([0, top], [0, top], "k--", linewidth=0.8)
    axis.set_xlabel("planted events per file")
    axis.set_ylabel("detected events per file")
    axis.set_title("Detected vs planted event counts")
    _save_figure(figure, os.path.join(out_dir, "counts_scatter.png"))

    figure, axis = plt.subplots(figsize=(5.5, 4))
    deviations = [r.max_prob_deviation for r in rows if r.max_prob_deviation > 0]
    if deviations:
        axis.hist(deviations, bins=40)
        axis.set_yscale("log")
    axis.set_xlabel("max per-window probability deviation")
    axis.set_ylabel("files")
    axis.set_title("Variant deviation per file")
    _save_figure(figure, os.path.join(out_dir, "deviation_hist.png"))


# --- report loading (for equivalence comparisons) ---

def load_report_tables(out_dir: str) -> dict:
    """Parse the delimited report files back into comparable structures.

    Numbers come back as parsed floats/ints so two reports can be compared
    value-for-value regardless of writer formatting; timing is excluded.
    """
    def parse_cell(text: str):
        if text == "undefined" or text == "":
            return None
        try:
            return int(text)
        except ValueError:
            try:
                return float(text)
            except ValueError:
                return text

    tables = {}
    for name in ("per_file.csv", "metrics.csv", "deviation.csv"):
        path = os.path.join(out_dir, name)
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = [[parse_cell(cell) for cell in row] for row in reader]
        tables[name] = rows
    return tables


def reports_identical(dir_a: str, dir_b: str) -> tuple[bool, str]:
    a = load_report_tables(dir_a)
    b = load_report_tables(dir_b)
    for name in a:
        if a[name] != b[name]:
            for row_a, row_b in zip(a[name], b[name]):
                if row_a != row_b:
                    return False, f"{name}: {row_a} != {row_b}"
            return False, f"{name}: row counts differ"
    return True, "identical"

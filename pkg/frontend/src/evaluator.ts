/**
 * Scripting-side evaluator: streams a labeled dataset to a native instance
 * and scores the results, mirroring the native evaluator's report exactly
 * (excluding timing).
 *
 * The native instance runs the inference pipeline; this side publishes the
 * audio channel, subscribes to both variants' result channels, posts the
 * next file only after the previous one was answered by every variant, and
 * finally writes per_file.csv / metrics.csv / deviation.csv / summary.txt.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { RemoteModuleSession } from "./session.js";
import {
  WireValue,
  decodeExact,
  field,
  floatField,
  floatListField,
  intField,
  intListField,
  listField,
  stringField,
} from "./wire.js";

export interface LabelRow {
  fileId: string;
  eventCount: number;
  positions: number[];
}

export interface EnsembleMeta {
  threshold: number;
  minRun: number;
  windowLen: number;
  hop: number;
  sampleRateHz: number;
}

export interface DetectionResult {
  id: string;
  count: number;
  probs: number[];
  windowIndices: number[];
  raw: number[];
  windowsTotal: number;
  windowsSkipped: number;
}

export interface FileRow {
  fileId: string;
  actualEvents: number;
  countA: number | null;
  countB: number | null;
  windowsTotal: number;
  windowsSkipped: number;
  missing: boolean;
}

export interface Confusion {
  tp: number;
  fp: number;
  fn: number;
  tn: number;
}

export interface Deviation {
  totalValues: number;
  equalValues: number;
  differentValues: number;
  maxDifference: number;
  meanDifference: number;
}

export function loadLabels(labelsPath: string): LabelRow[] {
  const text = fs.readFileSync(labelsPath, "utf-8");
  const lines = text.trim().split("\n");
  const rows: LabelRow[] = [];
  for (const line of lines.slice(1)) {
    if (!line) continue;
    const [fileId, eventCount, positions] = line.split(",");
    rows.push({
      fileId,
      eventCount: Number(eventCount),
      positions: positions ? positions.split(";").filter(Boolean).map(Number) : [],
    });
  }
  return rows;
}

export function loadEnsembleMeta(modelPath: string): EnsembleMeta {
  const value = decodeExact(fs.readFileSync(modelPath));
  return {
    threshold: floatField(value, "threshold"),
    minRun: intField(value, "min_run"),
    windowLen: intField(value, "window_len"),
    hop: intField(value, "hop"),
    sampleRateHz: intField(value, "sample_rate_hz"),
  };
}

export function parseResult(value: WireValue): DetectionResult {
  return {
    id: stringField(value, "id"),
    count: intField(value, "count"),
    probs: floatListField(value, "probs"),
    windowIndices: intListField(value, "window_indices"),
    raw: floatListField(value, "raw"),
    windowsTotal: intField(value, "windows_total"),
    windowsSkipped: intField(value, "windows_skipped"),
  };
}

/** Maximal runs of consecutive values above the threshold, length >= minRun. */
export function detectionRuns(probs: number[], threshold: number,
                              minRun: number): Array<[number, number]> {
  const runs: Array<[number, number]> = [];
  let start: number | null = null;
  for (let position = 0; position < probs.length; position++) {
    if (probs[position] > threshold) {
      if (start === null) start = position;
    } else {
      if (start !== null && position - start >= minRun) runs.push([start, position - 1]);
      start = null;
    }
  }
  if (start !== null && probs.length - start >= minRun) {
    runs.push([start, probs.length - 1]);
  }
  return runs;
}

function detectedSlots(result: DetectionResult, meta: EnsembleMeta): Set<number> {
  const slots = new Set<number>();
  for (const [start, end] of detectionRuns(result.probs, meta.threshold, meta.minRun)) {
    const centerPosition = Math.floor((start + end) / 2);
    const windowIndex = result.windowIndices[centerPosition];
    const centerSample = windowIndex * meta.hop + Math.floor(meta.windowLen / 2);
    slots.add(Math.floor(centerSample / meta.sampleRateHz));
  }
  return slots;
}

function slotsOfFile(result: DetectionResult, meta: EnsembleMeta): number {
  const length = (result.windowsTotal - 1) * meta.hop + meta.windowLen;
  return Math.max(1, Math.floor(length / meta.sampleRateHz));
}

export interface Evaluation {
  rows: FileRow[];
  confusion: Confusion;
  deviation: Deviation;
  missingFiles: string[];
  channelA: string;
  channelB: string;
}

export function scoreResults(
  collected: Array<{ fileId: string; a: DetectionResult | null; b: DetectionResult | null }>,
  labels: LabelRow[],
  meta: EnsembleMeta,
  channelA: string,
  channelB: string,
): Evaluation {
  const labelById = new Map(labels.map((l) => [l.fileId, l]));
  const rows: FileRow[] = [];
  const missing: string[] = [];
  let tp = 0, fp = 0, fn = 0, tn = 0;
  const rawA: number[] = [];
  const rawB: number[] = [];
  for (const item of collected) {
    const label = labelById.get(item.fileId);
    const actual = label ? label.eventCount : 0;
    if (item.a === null || item.b === null) {
      missing.push(item.fileId);
      rows.push({
        fileId: item.fileId, actualEvents: actual, countA: null, countB: null,
        windowsTotal: 0, windowsSkipped: 0, missing: true,
      });
      continue;
    }
    rows.push({
      fileId: item.fileId,
      actualEvents: actual,
      countA: item.a.count,
      countB: item.b.count,
      windowsTotal: item.a.windowsTotal,
      windowsSkipped: item.a.windowsSkipped,
      missing: false,
    });
    rawA.push(...item.a.raw);
    rawB.push(...item.b.raw);

    const slots = slotsOfFile(item.a, meta);
    const actualSlots = new Set<number>(
      (label ? label.positions : []).map(
        (p) => Math.min(Math.floor(p / meta.sampleRateHz), slots - 1)));
    const detected = new Set<number>(
      [...detectedSlots(item.a, meta)].map((s) => Math.min(s, slots - 1)));
    let hit = 0;
    for (const slot of actualSlots) if (detected.has(slot)) hit += 1;
    const union = new Set([...actualSlots, ...detected]).size;
    tp += hit;
    fp += detected.size - hit;
    fn += actualSlots.size - hit;
    tn += slots - union;
  }
  return {
    rows,
    confusion: { tp, fp, fn, tn },
    deviation: deviationReport(rawA, rawB),
    missingFiles: missing,
    channelA,
    channelB,
  };
}

export function deviationReport(a: number[], b: number[]): Deviation {
  if (a.length !== b.length) throw new Error(`length mismatch: ${a.length} vs ${b.length}`);
  let equal = 0;
  let maxDifference = 0;
  let totalDifference = 0;
  for (let i = 0; i < a.length; i++) {
    if (a[i] === b[i]) equal += 1;
    const difference = Math.abs(a[i] - b[i]);
    if (difference > maxDifference) maxDifference = difference;
    totalDifference += difference;
  }
  return {
    totalValues: a.length,
    equalValues: equal,
    differentValues: a.length - equal,
    maxDifference,
    meanDifference: a.length ? totalDifference / a.length : 0,
  };
}

export interface Metrics {
  sensitivity: number | null;
  specificity: number | null;
  precision: number | null;
  accuracy: number | null;
  mcc: number | null;
}

export function classificationMetrics(cm: Confusion): Metrics {
  const ratio = (num: number, den: number) => (den === 0 ? null : num / den);
  const mccDen = Math.sqrt(
    (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn));
  return {
    sensitivity: ratio(cm.tp, cm.tp + cm.fn),
    specificity: ratio(cm.tn, cm.tn + cm.fp),
    precision: ratio(cm.tp, cm.tp + cm.fp),
    accuracy: ratio(cm.tp + cm.tn, cm.tp + cm.tn + cm.fp + cm.fn),
    mcc: mccDen === 0 ? null : (cm.tp * cm.tn - cm.fp * cm.fn) / mccDen,
  };
}

function formatValue(value: number | string | null): string {
  if (value === null) return "undefined";
  return String(value);
}

export function writeReport(out: Evaluation, outDir: string, elapsedS: number): void {
  fs.mkdirSync(outDir, { recursive: true });
  const perFile = ["file,events,count_a,count_b,windows,skipped,missing"];
  for (const row of out.rows) {
    perFile.push([
      row.fileId, row.actualEvents, formatValue(row.countA), formatValue(row.countB),
      row.windowsTotal, row.windowsSkipped, row.missing ? 1 : 0,
    ].join(","));
  }
  fs.writeFileSync(path.join(outDir, "per_file.csv"), perFile.join("\n") + "\n");

  const metrics = classificationMetrics(out.confusion);
  const metricsRows = [
    "metric,value",
    `tp,${out.confusion.tp}`,
    `fp,${out.confusion.fp}`,
    `fn,${out.confusion.fn}`,
    `tn,${out.confusion.tn}`,
    `sensitivity,${formatValue(metrics.sensitivity)}`,
    `specificity,${formatValue(metrics.specificity)}`,
    `precision,${formatValue(metrics.precision)}`,
    `accuracy,${formatValue(metrics.accuracy)}`,
    `mcc,${formatValue(metrics.mcc)}`,
  ];
  fs.writeFileSync(path.join(outDir, "metrics.csv"), metricsRows.join("\n") + "\n");

  const d = out.deviation;
  const deviationRows = [
    "field,value",
    `total_values,${d.totalValues}`,
    `equal_values,${d.equalValues}`,
    `different_values,${d.differentValues}`,
    `max_difference,${formatValue(d.maxDifference)}`,
    `mean_difference,${formatValue(d.meanDifference)}`,
  ];
  fs.writeFileSync(path.join(outDir, "deviation.csv"), deviationRows.join("\n") + "\n");

  const summary = [
    `Detection metrics (${out.channelA} vs ground truth)`,
    `  Sensitivity  ${formatValue(metrics.sensitivity)}`,
    `  Specificity  ${formatValue(metrics.specificity)}`,
    `  Precision    ${formatValue(metrics.precision)}`,
    `  Accuracy     ${formatValue(metrics.accuracy)}`,
    `  MCC          ${formatValue(metrics.mcc)}`,
    "",
    `Deviations in model outputs (${out.channelA} vs ${out.channelB})`,
    `  Number of values  ${d.totalValues}`,
    `  Equal values      ${d.equalValues}`,
    `  Different values  ${d.differentValues}`,
    `  Max difference    ${formatValue(d.maxDifference)}`,
    `  Mean difference   ${formatValue(d.meanDifference)}`,
    "",
    `Files evaluated     ${out.rows.length}`,
    `Files missing       ${out.missingFiles.length}`,
  ];
  fs.writeFileSync(path.join(outDir, "summary.txt"), summary.join("\n") + "\n");
  fs.writeFileSync(path.join(outDir, "run_info.txt"), `elapsed_real_s=${elapsedS}\n`);
}

export interface EvaluatorOptions {
  host: string;
  port: number;
  datasetDir: string;
  outDir: string;
  channelA?: string;
  channelB?: string;
  audioChannel?: string;
  fileTimeoutMs?: number;
  maxFiles?: number;
}

/** Stream the dataset against a running native pipeline and write the report. */
export async function runEvaluation(options: EvaluatorOptions): Promise<Evaluation> {
  const channelA = options.channelA ?? "DetectedCoughs";
  const channelB = options.channelB ?? "DetectedCoughsQ";
  const audioChannel = options.audioChannel ?? "AudioData";
  const fileTimeoutMs = options.fileTimeoutMs ?? 60_000;
  const started = Date.now();

  const labels = loadLabels(path.join(options.datasetDir, "labels.csv"));
  const meta = loadEnsembleMeta(
    path.join(options.datasetDir, "models", "detector_float.model"));
  let files = fs.readdirSync(options.datasetDir)
    .filter((name) => name.endsWith(".sig"))
    .sort()
    .map((name) => path.join(options.datasetDir, name));
  if (options.maxFiles !== undefined) {
    files = files.slice(0, options.maxFiles);
  }

  const session = await RemoteModuleSession.connect(
    options.host, options.port, "evaluator");
  try {
    session.publish(audioChannel, "AudioChunk");

    const collected: Array<{
      fileId: string;
      a: DetectionResult | null;
      b: DetectionResult | null;
    }> = [];
    let pending: { resolve: () => void; a: boolean; b: boolean } | null = null;

    const onResult = (which: "a" | "b") => (value: WireValue) => {
      const result = parseResult(value);
      const current = collected[collected.length - 1];
      if (!current || current.fileId !== result.id || pending === null) return;
      if (which === "a") {
        current.a = result;
        pending.a = true;
      } else {
        current.b = result;
        pending.b = true;
      }
      if (pending.a && pending.b) pending.resolve();
    };
    session.subscribe(channelA, "DetectionResult", onResult("a"));
    session.subscribe(channelB, "DetectionResult", onResult("b"));

    // the native pipeline must subscribe our audio and publish both results
    await session.waitForTable((table) => {
      const audio = table.get(audioChannel);
      const a = table.get(channelA);
      const b = table.get(channelB);
      return !!audio?.hasSubscriber && !!a?.hasPublisher && !!b?.hasPublisher;
    });

    for (const file of files) {
      const chunk = decodeExact(fs.readFileSync(file));
      const fileId = stringField(chunk, "id");
      collected.push({ fileId, a: null, b: null });
      const answered = new Promise<boolean>((resolve) => {
        const timer = setTimeout(() => resolve(false), fileTimeoutMs);
        pending = {
          a: false,
          b: false,
          resolve: () => {
            clearTimeout(timer);
            resolve(true);
          },
        };
      });
      session.post(audioChannel, chunk);
      const ok = await answered;
      pending = null;
      if (!ok) {
        const current = collected[collected.length - 1];
        current.a = null;
        current.b = null;
      }
    }

    const evaluation = scoreResults(collected, labels, meta, channelA, channelB);
    writeReport(evaluation, options.outDir, (Date.now() - started) / 1000);
    return evaluation;
  } finally {
    session.close();
  }
}

/**
 * End-to-end: a native instance runs the inference pipeline; this SDK joins
 * it over TCP, streams the generated dataset, and must produce a report
 * identical (excluding timing) to the native evaluator's run.
 *
 * Requires the python package to be installed (it is, in this repo's dev
 * environment); the native side is driven through its CLI only.
 */
import { ChildProcess, execFile, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runEvaluation } from "../src/evaluator.js";
import { RemoteModuleSession, SessionClosed } from "../src/session.js";

const execFileAsync = promisify(execFile);

const FILE_COUNT = Number(process.env.EDGELOOP_TS_FILES ?? "278");
const SETUP_TIMEOUT_MS = 900_000;

let workDir: string;
let datasetDir: string;
let nativeOut: string;
let port: number;
let edge: ChildProcess | null = null;

function waitForPort(target: number, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const attempt = () => {
      const socket = net.createConnection({ host: "127.0.0.1", port: target });
      socket.once("connect", () => {
        socket.destroy();
        resolve();
      });
      socket.once("error", () => {
        socket.destroy();
        if (Date.now() > deadline) {
          reject(new Error(`port ${target} never opened`));
        } else {
          setTimeout(attempt, 200);
        }
      });
    };
    attempt();
  });
}

function parseCell(text: string): string | number | null {
  if (text === "undefined" || text === "") return null;
  const num = Number(text);
  return Number.isNaN(num) && text !== "NaN" ? text : num;
}

function loadTables(dir: string): Record<string, (string | number | null)[][]> {
  const tables: Record<string, (string | number | null)[][]> = {};
  for (const name of ["per_file.csv", "metrics.csv", "deviation.csv"]) {
    const text = fs.readFileSync(path.join(dir, name), "utf-8").trim();
    tables[name] = text.split("\n").map((line) => line.split(",").map(parseCell));
  }
  return tables;
}

beforeAll(async () => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), "edgeloop-ts-"));
  datasetDir = path.join(workDir, "dataset");
  nativeOut = path.join(workDir, "native_report");

  // generate the dataset + models and produce the native evaluator's report
  await execFileAsync("python3", [
    "-m", "edgeloop.cli", "mlloop",
    "--dataset-dir", datasetDir,
    "--out-dir", nativeOut,
    "--generate", "--files", String(FILE_COUNT), "--events",
    String(FILE_COUNT === 278 ? 281 : Math.ceil(FILE_COUNT * 1.01)),
  ], { timeout: SETUP_TIMEOUT_MS });

  // boot a native edge instance serving the same pipeline over TCP
  port = 20000 + Math.floor(Math.random() * 20000);
  const models = path.join(datasetDir, "models");
  const edgeConfig = path.join(workDir, "edge.xml");
  fs.writeFileSync(edgeConfig, `
<Module class="NetworkServerModule" id="net_server">
    <Port>${port}</Port>
</Module>
<Module class="CoughEnsembleModule" id="detector_a">
    <Model>${path.join(models, "detector_float.model")}</Model>
    <Input>AudioData</Input>
    <Output>DetectedCoughs</Output>
</Module>
<Module class="CoughEnsembleModule" id="detector_b">
    <Model>${path.join(models, "detector_q8.model")}</Model>
    <Input>AudioData</Input>
    <Output>DetectedCoughsQ</Output>
</Module>
`);
  edge = spawn("python3", [
    "-m", "edgeloop.cli", "run",
    "--config", edgeConfig, "--id", "edge",
  ], { stdio: "ignore" });
  await waitForPort(port);
}, SETUP_TIMEOUT_MS);

afterAll(() => {
  if (edge !== null) edge.kill("SIGINT");
  fs.rmSync(workDir, { recursive: true, force: true });
});

describe("remote module session", () => {
  it("handshakes and sees the native pipeline's table", async () => {
    const session = await RemoteModuleSession.connect("127.0.0.1", port, "probe");
    try {
      expect(session.peerInstanceId).toBe("edge");
      await session.waitForTable((table) =>
        table.get("AudioData")?.hasSubscriber === true &&
        table.get("DetectedCoughs")?.hasPublisher === true &&
        table.get("DetectedCoughsQ")?.hasPublisher === true);
    } finally {
      session.close();
    }
  });

  it("rejects posting after close", async () => {
    const session = await RemoteModuleSession.connect("127.0.0.1", port, "probe2");
    session.publish("Scratch", "Int");
    session.close();
    expect(() => session.post("Scratch", { kind: "int", value: 1n }))
      .toThrow(SessionClosed);
  });
});

describe("evaluator", () => {
  it(
    "streams the dataset and matches the native evaluator's report",
    async () => {
      const outDir = path.join(workDir, "ts_report");
      const evaluation = await runEvaluation({
        host: "127.0.0.1",
        port,
        datasetDir,
        outDir,
        maxFiles: FILE_COUNT,
      });
      expect(evaluation.rows).toHaveLength(FILE_COUNT);
      expect(evaluation.missingFiles).toHaveLength(0);
      expect(evaluation.deviation.differentValues).toBeGreaterThan(0);

      const nativeTables = loadTables(nativeOut);
      const tsTables = loadTables(outDir);
      for (const name of Object.keys(nativeTables)) {
        expect(tsTables[name], name).toEqual(nativeTables[name]);
      }
    },
    SETUP_TIMEOUT_MS,
  );
});

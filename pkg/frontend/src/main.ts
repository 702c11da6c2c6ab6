/** Command entry: stream a dataset against a native instance.
 *
 * Usage: node dist/main.js --host 127.0.0.1 --port 4000 \
 *          --dataset ./dataset --out ./report
 */
import { runEvaluation } from "./evaluator.js";

function arg(name: string, fallback?: string): string {
  const index = process.argv.indexOf(`--${name}`);
  if (index >= 0 && index + 1 < process.argv.length) return process.argv[index + 1];
  if (fallback !== undefined) return fallback;
  console.error(`missing required flag --${name}`);
  process.exit(1);
}

const options = {
  host: arg("host", "127.0.0.1"),
  port: Number(arg("port")),
  datasetDir: arg("dataset"),
  outDir: arg("out"),
};

runEvaluation(options)
  .then((evaluation) => {
    console.log(
      `evaluated ${evaluation.rows.length} files ` +
      `(${evaluation.missingFiles.length} missing); report in ${options.outDir}`);
  })
  .catch((error) => {
    console.error(`evaluation failed: ${error}`);
    process.exit(2);
  });

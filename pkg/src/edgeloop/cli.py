"""Operator entry point.

Subcommands:
    run         boot one configured runtime instance until interrupted
    coverage    coverage + arrival reports (CSV and figures) from a data dir
    mlloop      run the model-verification loop and write its report
    sync-serve  stand-alone receiver instance (server + file store)

Exit codes: 0 success, 1 configuration error, 2 runtime failure. Log
verbosity comes from the EDGELOOP_LOG environment variable (debug, info,
warning, error).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys
import threading

from .config import (
    default_module_registry,
    load_config_file,
    load_modules,
    parse_duration_ms,
    parse_rate_hz,
)
from .errors import ConfigError, EdgeLoopError
from .runtime import DEFAULT_EPOCH_MS, create_runtime

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("EDGELOOP_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeloop",
        description="Transparent pub-sub runtime: sensing, sync, model verification")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="boot a configured instance")
    run.add_argument("--config", required=True, help="XML module configuration file")
    run.add_argument("--id", required=True, help="instance id")
    run.add_argument("--time-scale", type=float, default=1.0,
                     help="virtual ms per real ms (default 1.0)")
    run.add_argument("--epoch-ms", type=int, default=DEFAULT_EPOCH_MS,
                     help="virtual clock epoch (ms since Unix epoch, UTC)")
    run.add_argument("--run-for", default=None,
                     help="stop after this much virtual time (e.g. 5s, 2m); default: until SIGINT")

    coverage = commands.add_parser("coverage", help="coverage/arrival reports")
    coverage.add_argument("--data-dir", required=True, help="directory of recorded data")
    coverage.add_argument("--rates", required=True,
                          help="CSV of sensor_id,rate_hz (fractions allowed)")
    coverage.add_argument("--out-csv", required=True, help="coverage CSV destination")
    coverage.add_argument("--hours", type=int, default=24)
    coverage.add_argument("--epoch-ms", type=int, default=DEFAULT_EPOCH_MS)
    coverage.add_argument("--arrivals-root", default=None,
                          help="receiver StoragePath (enables the arrival report)")
    coverage.add_argument("--user", default="User01")
    coverage.add_argument("--no-figures", action="store_true",
                          help="skip rendering PNG figures next to the CSVs")

    mlloop = commands.add_parser("mlloop", help="model verification loop")
    mlloop.add_argument("--dataset-dir", required=True)
    mlloop.add_argument("--out-dir", required=True)
    mlloop.add_argument("--edge-config", default=None,
                        help="edge XML config (default: built-in two-variant pipeline)")
    mlloop.add_argument("--server-config", default=None,
                        help="server XML config (default: built-in evaluator)")
    mlloop.add_argument("--generate", action="store_true",
                        help="generate the dataset and models if absent")
    mlloop.add_argument("--files", type=int, default=278,
                        help="dataset size when generating (default 278)")
    mlloop.add_argument("--events", type=int, default=281,
                        help="planted events when generating (default 281)")
    mlloop.add_argument("--local", action="store_true",
                        help="run evaluator and pipeline in one instance")

    serve = commands.add_parser("sync-serve", help="stand-alone sync receiver")
    serve.add_argument("--root", required=True, help="storage root for received files")
    serve.add_argument("--port", type=int, required=True)
    serve.add_argument("--time-scale", type=float, default=1.0)
    return parser


def _cmd_run(args) -> int:
    if not os.path.exists(args.config):
        print(f"error: --config file not found: {args.config}", file=sys.stderr)
        return 1
    config = load_config_file(args.config)
    runtime = create_runtime(args.id, args.time_scale, args.epoch_ms,
                             module_registry=default_module_registry())
    load_modules(runtime, config)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    runtime.start()
    log.info("instance %s running (%d modules)", args.id, len(config.modules))
    try:
        if args.run_for is not None:
            end_ms = runtime.clock.epoch_ms + parse_duration_ms(args.run_for)
            while runtime.clock.now_ms() < end_ms and not stop.wait(0.1):
                pass
            runtime.fire_due_timers(end_ms)
            runtime.drain()
        else:
            while not stop.wait(0.2):
                pass
    finally:
        runtime.stop()
    return 0


def _read_rates(path: str) -> dict:
    rates = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "sensor_id":
                continue
            rates[row[0].strip()] = parse_rate_hz(row[1])
    if not rates:
        raise ConfigError(f"no rates found in {path}")
    return rates


def _cmd_coverage(args) -> int:
    from .report import (
        arrival_figure,
        coverage_figure,
        write_arrival_csv,
        write_coverage_csv,
    )
    from .sensing.coverage import arrival_curve, coverage_report, iter_data_dir_records
    if not os.path.isdir(args.data_dir):
        print(f"error: --data-dir not found: {args.data_dir}", file=sys.stderr)
        return 1
    specs = _read_rates(args.rates)
    records = ((sensor_id, ts) for sensor_id, ts, _ in iter_data_dir_records(args.data_dir))
    rows = coverage_report(records, specs, args.hours, args.epoch_ms)
    write_coverage_csv(rows, args.out_csv)
    base = os.path.splitext(args.out_csv)[0]
    if not args.no_figures:
        coverage_figure(rows, base + ".png")
    if args.arrivals_root:
        from .sensing.coverage import load_file_arrivals
        arrivals = load_file_arrivals(args.arrivals_root, args.user)
        expected = {s: int(r * 3600 * args.hours) for s, r in specs.items()}
        curve = arrival_curve(arrivals, expected, args.epoch_ms, args.hours)
        write_arrival_csv(curve, base + "_arrival.csv")
        if not args.no_figures:
            arrival_figure(curve, base + "_arrival.png")
    print(f"coverage report written to {args.out_csv}")
    return 0


def _cmd_mlloop(args) -> int:
    from .mlloop.dataset import DatasetSpec, generate_dataset
    from .mlloop.harness import (
        _free_port,
        default_edge_config,
        default_server_config,
        run_mlloop,
    )
    from .mlloop.models import build_ensemble, quantize_ensemble, save_ensemble

    labels_path = os.path.join(args.dataset_dir, "labels.csv")
    models_dir = os.path.join(args.dataset_dir, "models")
    float_model = os.path.join(models_dir, "detector_float.model")
    quant_model = os.path.join(models_dir, "detector_q8.model")
    if args.generate:
        if not os.path.exists(labels_path):
            generate_dataset(args.dataset_dir,
                             DatasetSpec(n_files=args.files, total_events=args.events))
            log.info("dataset generated in %s", args.dataset_dir)
        if not os.path.exists(float_model):
            os.makedirs(models_dir, exist_ok=True)
            ensemble = build_ensemble(seed=2023)
            save_ensemble(float_model, ensemble)
            save_ensemble(quant_model, quantize_ensemble(ensemble, 8))
            log.info("models written to %s", models_dir)
    if not os.path.exists(labels_path):
        print(f"error: --dataset-dir has no labels.csv (use --generate): {args.dataset_dir}",
              file=sys.stderr)
        return 1

    if args.edge_config and args.server_config:
        with open(args.edge_config, "r", encoding="utf-8") as fh:
            edge_text = fh.read()
        with open(args.server_config, "r", encoding="utf-8") as fh:
            server_text = fh.read()
    elif args.edge_config or args.server_config:
        print("error: --edge-config and --server-config must be given together",
              file=sys.stderr)
        return 1
    else:
        port = _free_port()
        server_text = default_server_config(args.dataset_dir, port)
        edge_text = default_edge_config(f"127.0.0.1:{port}", float_model, quant_model)

    report = run_mlloop(edge_text, server_text, out_dir=args.out_dir, local=args.local)
    print(f"evaluated {len(report.rows)} files "
          f"({len(report.missing_files)} missing); report in {args.out_dir}")
    return 0


def _cmd_sync_serve(args) -> int:
    runtime = create_runtime("sync-server", args.time_scale,
                             module_registry=default_module_registry())
    runtime.register_module("NetworkServerModule", "net_server", {"Port": str(args.port)})
    runtime.register_module("DataReceiverModule", "receiver", {"StoragePath": args.root})
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    runtime.start()
    print(f"receiving into {args.root} on port {args.port}")
    try:
        while not stop.wait(0.2):
            pass
    finally:
        runtime.stop()
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "coverage": _cmd_coverage,
        "mlloop": _cmd_mlloop,
        "sync-serve": _cmd_sync_serve,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EdgeLoopError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

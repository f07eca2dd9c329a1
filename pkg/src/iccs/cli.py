"""Command-line entry points.

    iccs validate <config>                check a facility config
    iccs launch <config> [--wall] [--port N] [--tcp-port N] [--console DIR]
    iccs run <config> <script> [--wall] [--out DIR]
    iccs metrics <run-dir>                print a stored metrics report

Config, plan, and script arguments accept paths or @names resolved against
the packaged data directory (e.g. @8beam, @single_shot).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from iccs.harness.config import load_config, resolve_data_path
from iccs.harness.facility import launch
from iccs.harness.script import ScriptRunner


def _load(ref: str):
    return load_config(resolve_data_path(ref, kinds=(".cfg", "")))


def cmd_validate(args) -> int:
    config = _load(args.config)
    print(f"{config.name}: {config.beams} beams, {len(config.feps)} FEPs, "
          f"{config.point_count()} control points, "
          f"{config.plc.point_count()} industrial points, "
          f"{config.camera_count()} cameras")
    if config.scale_note:
        print(f"scale: {config.scale_note}")
    print("ok")
    return 0


def cmd_launch(args) -> int:
    from iccs.harness.gateway import Gateway

    config = _load(args.config)
    facility = launch(config, mode="wall" if args.wall else "virtual",
                      run_dir=Path(args.out) if args.out else None,
                      tcp_port=args.tcp_port)
    gateway = Gateway(facility, port=args.port,
                      console_dir=Path(args.console) if args.console else None)
    print(f"facility {config.name} up; gateway at {gateway.url}")
    if facility.tcp_server is not None:
        print(f"bus on tcp port {facility.tcp_server.port}")
    print("Ctrl-C to shut down")
    try:
        while True:
            time.sleep(1.0)
            if not args.wall:
                facility.advance(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        gateway.close()
        facility.shutdown()
    return 0


def cmd_run(args) -> int:
    config = _load(args.config)
    run_dir = Path(args.out) if args.out else None
    facility = launch(config, mode="wall" if args.wall else "virtual",
                      run_dir=run_dir)
    try:
        runner = ScriptRunner(facility)
        report = runner.run_path(args.script)
        print(report.render(), end="")
        try:
            metrics = facility.metrics.report()
            print(metrics.render(), end="")
            if run_dir is not None:
                (run_dir / "metrics.txt").write_text(metrics.render(),
                                                     encoding="utf-8")
        except Exception as exc:
            print(f"metrics: {exc}")
        if run_dir is not None:
            (run_dir / "scenario.txt").write_text(report.render(),
                                                  encoding="utf-8")
        return 0 if report.all_ok else 1
    finally:
        facility.shutdown()


def cmd_metrics(args) -> int:
    path = Path(args.run_dir) / "metrics.txt"
    if not path.exists():
        print(f"no metrics report under {args.run_dir}", file=sys.stderr)
        return 1
    print(path.read_text(encoding="utf-8"), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="iccs",
        description="desk-scale integrated control system for a simulated "
                    "laser facility")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="validate a facility config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("launch", help="launch a facility with the gateway")
    p.add_argument("config")
    p.add_argument("--wall", action="store_true",
                   help="wall-clock mode (default: virtual, 1 s/s)")
    p.add_argument("--port", type=int, default=8080, help="gateway port")
    p.add_argument("--tcp-port", type=int, default=None,
                   help="also expose the bus broker on this TCP port")
    p.add_argument("--console", default=None,
                   help="serve the operator console from this directory")
    p.add_argument("--out", default=None, help="run directory for logs")
    p.set_defaults(func=cmd_launch)

    p = sub.add_parser("run", help="run a scenario script")
    p.add_argument("config")
    p.add_argument("script")
    p.add_argument("--wall", action="store_true")
    p.add_argument("--out", default=None, help="run directory for logs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="print a stored metrics report")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_metrics)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

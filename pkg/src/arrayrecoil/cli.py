"""Command line front end.

    arrayrecoil <experiment> --config run.json [--out DIR] [--threads N] [--verbose]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 I/O
error.  Every run that gets as far as an output directory leaves a
``manifest.json`` there, including failed ones.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback

import jsonschema
import numpy as np

from . import __version__
from .config import EXPERIMENTS, SCHEMA, RunConfig
from .errors import GeometryOutOfRange, InvalidArgument, InvalidGeometry, NumericalFailure
from .experiments import RUNNERS, Output, run_sweep

log = logging.getLogger("arrayrecoil")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
CONFIG_ERRORS = (jsonschema.ValidationError, json.JSONDecodeError, InvalidArgument, InvalidGeometry,
                 GeometryOutOfRange, IndexError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arrayrecoil", description="Photon recoil in atomic arrays")
    p.add_argument("experiment", choices=EXPERIMENTS + ("validate",))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="reserved; recorded in the manifest")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--print-schema", action="store_true", help="with 'validate': print the config schema")
    return p


def error_record(exc: BaseException, code: int) -> dict:
    msg = str(exc)
    if isinstance(exc, jsonschema.ValidationError):
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        msg = f"{where}: {exc.message}"
    return {"type": type(exc).__name__, "message": msg, "exit_code": code}


def classify(exc: BaseException) -> int:
    if isinstance(exc, CONFIG_ERRORS):
        return EXIT_CONFIG
    if isinstance(exc, (NumericalFailure, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"status": "error", "error": error_record(exc, code)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.experiment == "validate" and args.print_schema:
        print(json.dumps(SCHEMA, indent=1))
        return EXIT_OK
    if not args.config:
        return _fail(EXIT_CONFIG, InvalidArgument("--config is required"))
    try:
        raw = load_config(args.config)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except json.JSONDecodeError as exc:
        return _fail(EXIT_CONFIG, exc)

    cfg, config_exc = None, None
    try:
        cfg = RunConfig.from_dict(raw)
        if cfg.experiment and args.experiment not in ("validate", cfg.experiment):
            raise InvalidArgument(f"config is for experiment {cfg.experiment!r}, not {args.experiment!r}")
    except CONFIG_ERRORS as exc:
        config_exc = exc
    out_dir = args.out or (raw.get("output") if isinstance(raw, dict) else None)
    if args.experiment == "validate" or (config_exc is not None and not out_dir):
        if config_exc is not None:
            return _fail(EXIT_CONFIG, config_exc)
        print(json.dumps({"status": "ok", "config_hash": cfg.hash()}))
        return EXIT_OK
    out_dir = out_dir or "."
    try:
        out = Output(out_dir)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    manifest_path = out.path("manifest.json")
    previous = _read_manifest(manifest_path)
    manifest = {
        "experiment": args.experiment,
        "version": __version__,
        "config_hash": cfg.hash() if cfg else None,
        "config_path": os.path.abspath(args.config),
        "seed": args.seed,
        "threads": None,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "status": "running",
        "files": [],
    }
    if config_exc is not None:
        return _finish(manifest, manifest_path, out, error=config_exc, code=EXIT_CONFIG, t0=time.time())

    if args.threads:
        cfg.numerics.threads = args.threads
    manifest["threads"] = cfg.numerics.threads
    t0 = time.time()
    try:
        if args.experiment == "sweep":
            completed = set()
            if previous and previous.get("config_hash") == manifest["config_hash"]:
                completed = set(previous.get("completed", []))
                out.files = list(previous.get("files", []))
            elif os.path.exists(out.path("sweep.csv")):
                os.remove(out.path("sweep.csv"))
            manifest["completed"] = sorted(completed)

            def checkpoint(i):
                completed.add(i)
                manifest["completed"] = sorted(completed)
                manifest["files"] = list(out.files)
                _write_manifest(manifest_path, manifest)

            summary = run_sweep(cfg, out, completed, checkpoint)
        else:
            summary = RUNNERS[args.experiment](cfg, out)
    except Exception as exc:  # every failure still leaves a manifest
        code = classify(exc)
        log.debug("run failed", exc_info=True)
        if args.verbose:
            traceback.print_exc()
        return _finish(manifest, manifest_path, out, error=exc, code=code, t0=t0)
    manifest["summary"] = summary
    return _finish(manifest, manifest_path, out, t0=t0)


def _finish(manifest, path, out, t0, error=None, code=EXIT_OK) -> int:
    manifest["wall_time"] = time.time() - t0
    manifest["files"] = list(out.files)
    if error is None:
        manifest["status"] = "ok"
    else:
        manifest["status"] = "error"
        manifest["error"] = error_record(error, code)
        print(json.dumps({"status": "error", "error": manifest["error"]}), file=sys.stderr)
    try:
        _write_manifest(path, manifest)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    return code


def _write_manifest(path, manifest):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _read_manifest(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: run, simgen, ate-eval.

Errors exit nonzero with a single ``error=<kind> ...`` line on stderr:
configuration errors exit 2, parse errors 3, I/O failures 4, anything else
from the library 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import load_config
from .errors import BeliefMapError, ConfigError, IoFailure, ParseError

EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_IO = 4

log = logging.getLogger("beliefmap")


class KeyValueFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return f"level={record.levelname} logger={record.name} {record.getMessage()}"


def _setup_logging(level: str, logfile: Optional[Path] = None) -> None:
    root = logging.getLogger("beliefmap")
    root.handlers.clear()
    root.setLevel(level)
    root.propagate = False
    err = logging.StreamHandler(sys.stderr)
    err.setFormatter(KeyValueFormatter())
    err.setLevel(logging.WARNING)
    root.addHandler(err)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w")
        fh.setFormatter(KeyValueFormatter())
        root.addHandler(fh)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ") + '"'


def _cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = load_config(args.config)
    frames = args.frames or cfg.frames_dir
    out = Path(args.out or cfg.out_dir or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    _setup_logging(cfg.log_level, out / "run.log")
    log.info("event=config config_hash=%s source=%s", cfg.config_hash, args.config or "<defaults>")
    for line in cfg.echo():
        log.info("event=config_value %s", line)
    result = run_pipeline(cfg, frames, out, single_thread=args.single_thread, map_path=args.map_out)
    for k, v in result.summary.items():
        log.info("event=summary %s=%s", k, v)
    print(f"status=ok frames={result.summary['frames']} objects={result.summary['objects_exported']} out={out}")
    return 0


def _cmd_simgen(args) -> int:
    from dataclasses import replace

    from .simulator import emit_tum, generate, load_spec, scenario

    _setup_logging("INFO")
    if args.spec:
        spec = load_spec(args.spec)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        if not args.scenario:
            raise ConfigError("--scenario", "give --scenario or --spec")
        spec = scenario(args.scenario, args.seed or 0, args.frames)
    stream, _ = generate(spec)
    emit_tum(stream, args.out)
    print(f"status=ok scenario={spec.name} seed={spec.seed} frames={spec.frame_count} out={args.out}")
    return 0


def _cmd_ate(args) -> int:
    from .evaluation import compute_ate
    from .io import read_trajectory

    _setup_logging("WARNING")
    report = compute_ate(read_trajectory(args.est), read_trajectory(args.gt), args.max_dt, args.scale)
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beliefmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline over a frames directory")
    r.add_argument("--config", help="YAML config (defaults when omitted)")
    r.add_argument("--frames", help="frames directory (overrides io.frames)")
    r.add_argument("--out", help="output directory (overrides io.out)")
    r.add_argument("--single-thread", action="store_true", help="run all stages on one thread")
    r.add_argument("--map-out", help="alternative path for the exported map")
    r.set_defaults(func=_cmd_run)

    from .simulator import SCENARIOS

    s = sub.add_parser("simgen", help="generate a synthetic scenario")
    s.add_argument("--scenario", choices=SCENARIOS)
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int, help="override the scenario length")
    s.add_argument("--spec", help="YAML scenario file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simgen)

    a = sub.add_parser("ate-eval", help="absolute trajectory error between two TUM files")
    a.add_argument("--est", required=True)
    a.add_argument("--gt", required=True)
    a.add_argument("--max-dt", type=float, default=0.02)
    a.add_argument("--scale", action="store_true", help="also estimate a scale factor")
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=_cmd_ate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error=config key={exc.key} reason={_quote(exc.reason)}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"error=parse path={exc.path} line={exc.line} reason={_quote(exc.reason)}", file=sys.stderr)
        return EXIT_PARSE
    except IoFailure as exc:
        print(f"error=io reason={_quote(str(exc))}", file=sys.stderr)
        return EXIT_IO
    except BeliefMapError as exc:
        print(f"error={type(exc).__name__} reason={_quote(str(exc))}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

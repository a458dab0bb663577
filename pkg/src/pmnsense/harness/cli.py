"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, ExperimentConfig
from .experiments import run_experiment, simulate, sweep

log = logging.getLogger("pmnsense")
SCHEME_COMMANDS = ("direct", "indirect", "clutter", "baseline")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="base seed for symbols and noise")
    p.add_argument("--out", help="output directory")
    p.add_argument("--runs", type=int, help="number of seeded runs")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--mode", choices=("downlink", "uplink"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmnsense", description="Sensing-parameter estimation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="write scene and signal fixtures"))
    for name in SCHEME_COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} experiment"))
    sw = sub.add_parser("sweep", help="repeat an experiment over values of one config field")
    _common(sw)
    sw.add_argument("--scheme", choices=SCHEME_COMMANDS)
    sw.add_argument("--param", required=True, help="dotted config field, e.g. clutter.alpha")
    sw.add_argument("--values", required=True, help="comma-separated values (parsed as JSON scalars)")
    return ap


def _load(args) -> ExperimentConfig:
    data = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    if args.command in SCHEME_COMMANDS:
        data["scheme"] = args.command
    elif args.command == "sweep" and args.scheme:
        data["scheme"] = args.scheme
    for key in ("seed", "runs", "workers", "mode"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.out is not None:
        data["output"] = args.out
    return ExperimentConfig.from_dict(data)


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load(args)
        if args.command == "simulate":
            simulate(cfg)
        elif args.command == "sweep":
            sweep(cfg, args.param, [_scalar(v) for v in args.values.split(",")])
        else:
            results = run_experiment(cfg)
            for r in results:
                if r.error:
                    log.warning("run %d failed: %s", r.run_id, r.error)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("results written to %s", cfg.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())

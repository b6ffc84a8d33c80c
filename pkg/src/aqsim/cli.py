"""Command-line front end: ``aq <command> --config file.json``.

Commands map onto scenarios (``evolve`` is the single-state run) except
``compile``, which just prints the reaction tables for a Hamiltonian.
Exit status is 0 on success, 2 for configuration or I/O problems, and 3
when the run itself degenerates numerically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import AllCountsZero, ConfigError, CountOverflow, \
    EscapedQuantum, IoError, Timeout, TooFewWorkers
from .harness import _parse_hamiltonian, compile_report, load_run_config, run
from .snapshots import write_report

_SCENARIO = {"evolve": "single", "measure": "measure",
             "multi": "multi", "faulty": "faulty"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aq", description="amplitude-quanta simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
            ("compile", "print reaction tables for a Hamiltonian"),
            ("evolve", "run one state under a Hamiltonian"),
            ("measure", "repeat the collision readout and tally outcomes"),
            ("multi", "run a joint system of several particles"),
            ("faulty", "partitioned run with hung-worker sweep")):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--config", required=True, help="JSON run config")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the engine seed")
        cmd.add_argument("--out", default=None,
                         help="override the output directory")
    return parser


def _compile(args) -> int:
    path = Path(args.config)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"{path}: cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if "hamiltonian" not in cfg:
        raise ConfigError("config.hamiltonian: required key missing")
    h = _parse_hamiltonian(cfg["hamiltonian"], "config.hamiltonian",
                           path.parent)
    report = compile_report(h)
    if args.out is not None:
        write_report(Path(args.out) / "report.json", report)
    for block in report["blocks"]:
        for rule in block["rules"]:
            print(rule["text"])
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "compile":
            return _compile(args)
        config = load_run_config(args.config, seed=args.seed, out=args.out)
        if config.scenario != _SCENARIO[args.command]:
            raise ConfigError(
                f"config.scenario: {config.scenario!r} does not match "
                f"command {args.command!r}")
        report = run(config)
        summary = report.get("fidelity_vs_oracle")
        if summary is not None:
            print(f"fidelity {summary:.4f}")
        print(f"report: {config.out_dir / 'report.json'}")
        return 0
    except (ConfigError, IoError, TooFewWorkers) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AllCountsZero, CountOverflow, EscapedQuantum, Timeout,
            FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

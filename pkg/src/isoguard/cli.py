"""Command-line entry points.

Exit codes: 0 clean, 1 violations found, 2 usage, I/O or validation failure.
Reports go to stdout as JSON; logs and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import chronos, oracle
from .aion import DEFAULT_TIMEOUT_MS, OnlineGc
from .harness import DEFAULT_BATCH, DEFAULT_INTERVAL_MS, DEFAULT_SERVICE_MS, build_schedule, run_online
from .history import History, HistoryError, load_history, validate_history, write_history
from .versioned import SpillError
from .workload import DISTRIBUTIONS, FaultKind, FaultSpec, GenerationStats, WorkloadParams, generate, inject_faults

EXIT_CLEAN = 0
EXIT_VIOLATIONS = 1
EXIT_ERROR = 2

SPILL_ENV = "ISOGUARD_SPILL_DIR"

log = logging.getLogger("isoguard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 already; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be within [0, 1], got {v}")
    return v


def _chronos_gc(text: str) -> chronos.GcPolicy:
    try:
        return chronos.GcPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _online_gc(text: str) -> OnlineGc:
    try:
        return OnlineGc.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isoguard", description="Timestamp-based SI/SER checking of transaction histories.")
    p.add_argument("--config", type=Path, help="JSON file of flag defaults (same names as the long flags)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate an SI database and write a history")
    g.add_argument("--sessions", type=_positive_int, default=50)
    g.add_argument("--txns", type=_positive_int, default=100_000)
    g.add_argument("--ops", type=_positive_int, default=15, help="operations per transaction")
    g.add_argument("--reads", type=_fraction, default=0.5, help="read ratio")
    g.add_argument("--keys", type=_positive_int, default=1000)
    g.add_argument("--dist", choices=DISTRIBUTIONS, default="zipf")
    g.add_argument("--theta", type=float, default=0.99, help="zipf exponent")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--stats", action="store_true", help="print generation stats as JSON")

    c = sub.add_parser("check", help="check a history offline")
    c.add_argument("--mode", choices=("si", "ser"), default="si")
    c.add_argument("--engine", choices=("chronos", "oracle"), default="chronos")
    c.add_argument("--gc", type=_chronos_gc, default=chronos.GcPolicy.never(), help="never | every:N")
    c.add_argument("path", type=Path)

    o = sub.add_parser("check-online", help="replay a history through the online checker")
    o.add_argument("--mode", choices=("si", "ser"), default="si")
    o.add_argument("--timeout-ms", type=float, default=DEFAULT_TIMEOUT_MS)
    o.add_argument("--mu", type=float, default=100.0, help="mean delivery delay (ms)")
    o.add_argument("--sigma", type=float, default=10.0, help="delay standard deviation (ms)")
    o.add_argument("--batch", type=_positive_int, default=DEFAULT_BATCH)
    o.add_argument("--interval-ms", type=float, default=DEFAULT_INTERVAL_MS,
                   help="gap between consecutive completions (ms)")
    o.add_argument("--service-ms", type=float, default=DEFAULT_SERVICE_MS,
                   help="virtual processing time per transaction (ms)")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--gc", type=_online_gc, default=OnlineGc(), help="never | threshold:N | cap:N")
    clock = o.add_mutually_exclusive_group()
    clock.add_argument("--virtual-time", dest="virtual", action="store_true", default=True)
    clock.add_argument("--wall-clock", dest="virtual", action="store_false")
    o.add_argument("--events", type=Path, help="write the raw checker events as JSON lines")
    o.add_argument("path", type=Path)

    i = sub.add_parser("inject", help="inject faults into a history")
    i.add_argument("--fault", required=True, help=", ".join(k.value for k in FaultKind))
    i.add_argument("--rate", type=float, required=True)
    i.add_argument("--magnitude", type=_positive_int, default=5, help="tick delta for timestamp faults")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", type=Path, required=True)
    i.add_argument("input", type=Path)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``, letting a ``--config`` file supply defaults for the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known_args, rest = pre.parse_known_args(argv)
    command = next((tok for tok in rest if tok in COMMANDS), None)
    if known_args.config is None or command is None:
        return parser.parse_args(argv)
    try:
        conf = json.loads(known_args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known_args.config}: {exc}") from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices[command]
    known = {a.dest: a for a in sp._actions if a.dest != "help"}
    defaults = {}
    for name, value in conf.items():
        dest = name.lstrip("-").replace("-", "_")
        if dest == "virtual_time":
            dest = "virtual"
        action = known.get(dest)
        if action is None:
            raise UsageError(f"unknown config key {name!r} for {command}")
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {name!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {name!r}: {value!r} not in {list(action.choices)}")
        if action.type is not None and action.type in (_positive_int, _fraction) and not isinstance(value, str):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {name!r}: {exc}") from None
        if isinstance(value, str) and dest in ("out", "path", "input", "events"):
            value = Path(value)
        defaults[dest] = value
        action.required = False
        if not action.option_strings:  # positional satisfied by the config
            action.nargs = "?"
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _load(path: Path) -> History:
    h = load_history(path)
    errors = validate_history(h)
    if errors:
        lines = []
        for e in errors:
            where = sorted(h.line_of[t] for t in e.tids if t in h.line_of)
            prefix = "line " + ",".join(map(str, where)) + ": " if where else ""
            lines.append(prefix + e.message)
        raise HistoryError("history is not well-formed:\n  " + "\n  ".join(lines))
    return h


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def cmd_generate(args) -> int:
    params = WorkloadParams(args.sessions, args.txns, args.ops, args.reads, args.keys,
                            args.dist, args.theta, args.seed)
    stats = GenerationStats()
    h = generate(params, stats)
    write_history(h, args.out)
    log.info("wrote %d transactions to %s", len(h), args.out)
    if args.stats:
        _emit(stats.to_dict())
    return EXIT_CLEAN


def cmd_check(args) -> int:
    h = _load(args.path)
    if args.engine == "oracle":
        fn = oracle.oracle_check_si if args.mode == "si" else oracle.oracle_check_ser
        report = fn(h)
    else:
        fn = chronos.check_si if args.mode == "si" else chronos.check_ser
        report = fn(h, args.gc)
    _emit(report.to_dict())
    return EXIT_CLEAN if report.clean else EXIT_VIOLATIONS


def cmd_check_online(args) -> int:
    h = _load(args.path)
    schedule = build_schedule(h, args.mu, args.sigma, args.batch, args.seed, args.interval_ms)
    spill_dir = os.environ.get(SPILL_ENV) or None
    sink = None
    fh = None
    if args.events is not None:
        fh = open(args.events, "w", encoding="utf-8")
        sink = lambda ev: fh.write(json.dumps(ev.to_dict()) + "\n")  # noqa: E731
    try:
        result = run_online(schedule, args.mode, args.gc, args.timeout_ms, args.virtual,
                            args.service_ms, spill_dir=spill_dir, sink=sink)
    finally:
        if fh is not None:
            fh.close()
    result.extra["schedule"] = {"mu_ms": args.mu, "sigma_ms": args.sigma, "batch": args.batch,
                                "interval_ms": args.interval_ms, "seed": args.seed,
                                "inversions": schedule.inversions()}
    _emit(result.to_dict())
    return EXIT_CLEAN if result.report.clean else EXIT_VIOLATIONS


def cmd_inject(args) -> int:
    try:
        kind = FaultKind(args.fault)
    except ValueError:
        raise UsageError(f"unknown fault {args.fault!r}; expected one of "
                         + ", ".join(k.value for k in FaultKind)) from None
    spec = FaultSpec(kind, args.rate, args.magnitude, args.seed)
    h = _load(args.input)
    out, changed = inject_faults(h, spec)
    if changed:
        write_history(out, args.out)
    else:  # nothing selected: copy the input through untouched
        args.out.write_bytes(args.input.read_bytes())
    _emit({"fault": kind.value, "rate": args.rate, "seed": args.seed, "changed": changed})
    return EXIT_CLEAN


COMMANDS = {
    "generate": cmd_generate,
    "check": cmd_check,
    "check-online": cmd_check_online,
    "inject": cmd_inject,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"isoguard: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, HistoryError, SpillError, ValueError, OSError) as exc:
        print(f"isoguard: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

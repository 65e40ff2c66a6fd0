"""Command-line entry point: ``orp-sim run|compare|sweep|ingest``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from orpsim.config import CliConfig
from orpsim.simulator import (
    ALLOCATIONS_HEADER,
    COMPARE_HEADER,
    CUMULATIVE_HEADER,
    METRICS_HEADER,
    DEFAULT_PENALTY_GRID,
    DEFAULT_REWARD_GRID,
    SWEEP_HEADER,
    Strategy,
    compare,
    frange,
    run,
    sweep,
)
from orpsim.engine import TRACE_HEADER
from orpsim.workload import (
    IngestConfig,
    SyntheticSpec,
    Workload,
    generate_synthetic,
    ingest_traces,
    load_workload,
    write_workload,
)

log = logging.getLogger("orpsim")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

DEFAULT_SWEEP_WORKLOAD = "synthetic:count=50,class1=1,class2=1,class3=1"
DEFAULT_GRID = "lambda_r=0.7:0.9:0.05,lambda_p=0:0.1:0.025"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # malformed arguments are validation failures, not I/O failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(path, header: Sequence[str], rows) -> None:
    """Write ``rows`` to ``path`` atomically (temp file then rename)."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory not writable: {out}")
    return out


# -- shared argument handling ----------------------------------------------

def _add_sim_args(p: argparse.ArgumentParser, workload_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--workload", required=workload_required,
                   help="workload CSV, or synthetic:<spec> e.g. synthetic:count=50,class1=1,class2=1")
    p.add_argument("--elastic", action=argparse.BooleanOptionalAction, default=None,
                   help="buy missing VMs from the IaaS catalog (config default: off)")
    p.add_argument("--lambda-r", type=float, help="reward rate (config default: 0.8)")
    p.add_argument("--lambda-p", type=float, help="penalty rate (config default: 0.05)")
    p.add_argument("--threshold", type=float, help="favorable-response threshold on rho (config default: 0.5)")
    p.add_argument("--max-iterations", type=int, help="per-service iteration cap (config default: 500)")
    p.add_argument("--billing-hours", type=float, help="hours billed per allocated VM (config default: 1)")


def _load_config(args) -> CliConfig:
    cfg = CliConfig.load(args.config) if args.config else CliConfig()
    data = cfg.model_dump()
    if args.elastic is not None:
        data["elastic"] = args.elastic
    if args.lambda_r is not None:
        data["learning"]["lambda_reward"] = args.lambda_r
    if args.lambda_p is not None:
        data["learning"]["lambda_penalty"] = args.lambda_p
    if args.threshold is not None:
        data["learning"]["threshold"] = args.threshold
    if args.max_iterations is not None:
        data["convergence"]["max_iterations"] = args.max_iterations
    if args.billing_hours is not None:
        data["billing_hours"] = args.billing_hours
    if getattr(args, "trace", False):
        data["trace"] = True
    return CliConfig.model_validate(data)


def resolve_workload(spec: str, seed: int) -> Workload:
    if spec.startswith("synthetic:"):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
        return generate_synthetic(SyntheticSpec.parse(spec[len("synthetic:"):]), rng)
    return load_workload(spec)


def parse_strategies(text: str) -> List[Strategy]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    out = []
    for name in names:
        try:
            strategy = Strategy(name.lower())
        except ValueError:
            raise UsageError(f"unknown strategy {name!r}; expected one of orp, random, greedy")
        if strategy in out:
            log.warning("duplicate strategy %r ignored", name)
            continue
        out.append(strategy)
    return out


def parse_axis(text: str) -> List[float]:
    """``v`` or ``lo:hi:step`` (inclusive)."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        if len(parts) == 3:
            return frange(*(float(p) for p in parts))
    except ValueError as exc:
        raise UsageError(f"malformed grid axis {text!r}: {exc}")
    raise UsageError(f"malformed grid axis {text!r}; expected v or lo:hi:step")


def parse_grid(text: str):
    axes = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in ("lambda_r", "lambda_p"):
            raise UsageError(f"malformed grid item {item!r}; expected lambda_r=... or lambda_p=...")
        axes[key.strip()] = parse_axis(value.strip())
    rewards = axes.get("lambda_r", DEFAULT_REWARD_GRID)
    penalties = axes.get("lambda_p", DEFAULT_PENALTY_GRID)
    for a in rewards:
        if not 0.7 <= a <= 0.9:
            log.warning("lambda_r=%g lies outside the usual 0.7..0.9 sweep range", a)
    for b in penalties:
        if not 0.0 <= b <= 0.1:
            log.warning("lambda_p=%g lies outside the usual 0..0.1 sweep range", b)
    return rewards, penalties


def parse_range(text: str):
    lo, sep, hi = text.partition(":")
    try:
        return (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise UsageError(f"malformed range {text!r}; expected N or LO:HI")


# -- commands ---------------------------------------------------------------

def cmd_run(args) -> int:
    strategy = parse_strategies(args.strategy)
    if len(strategy) != 1:
        raise UsageError(f"--strategy takes exactly one of orp, random, greedy, got {args.strategy!r}")
    cfg = _load_config(args)
    sim = cfg.to_sim_config()
    workload = resolve_workload(args.workload, args.seed)
    out = _out_dir(args.out)
    result = run(sim, workload, strategy[0], args.seed)
    write_csv(out / "metrics.csv", METRICS_HEADER, [result.metrics_row()])
    write_csv(out / "allocations.csv", ALLOCATIONS_HEADER, result.allocation_rows())
    write_csv(out / "cumulative_cost.csv", CUMULATIVE_HEADER, result.cumulative_rows())
    if sim.trace:
        write_csv(out / "trace.csv", TRACE_HEADER, result.trace_rows())
    m = result.metrics
    print(f"{strategy[0].value}: processed {m.requests_processed}/{m.requests_total}, "
          f"cost ${m.total_cost_usd:.4f}, utilization {m.mean_utilization:.4f}")
    return EXIT_OK


def _seeds(args) -> List[int]:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    return list(range(args.seed, args.seed + args.seeds))


def cmd_compare(args) -> int:
    strategies = parse_strategies(args.strategies)
    if len(strategies) < 2:
        raise UsageError("compare needs at least two distinct strategies")
    cfg = _load_config(args)
    sim = cfg.to_sim_config()
    workload = resolve_workload(args.workload, args.seed)
    out = _out_dir(args.out)
    rows, results = compare(sim, workload, strategies, _seeds(args))
    write_csv(out / "comparison.csv", COMPARE_HEADER, [r.as_row() for r in rows])
    write_csv(out / "metrics.csv", METRICS_HEADER, [r.metrics_row() for runs in results for r in runs])
    write_csv(out / "cumulative_cost.csv", CUMULATIVE_HEADER,
              [row for runs in results for r in runs for row in r.cumulative_rows()])
    for r in rows:
        print(f"{r.strategy.value}: rejected {r.rejected_mean:.2f}±{r.rejected_std:.2f}, "
              f"utilization {r.utilization_mean:.4f}, cost ${r.cost_mean:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    rewards, penalties = parse_grid(args.grid)
    cfg = _load_config(args)
    sim = cfg.to_sim_config()
    workload = resolve_workload(args.workload or DEFAULT_SWEEP_WORKLOAD, args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    rows = sweep(sim, workload, rewards, penalties, _seeds(args))
    write_csv(out, SWEEP_HEADER, [r.as_row() for r in rows])
    best = min(rows, key=lambda r: r.mean_iterations)
    print(f"{len(rows)} cells; fewest iterations at lambda_r={best.lambda_reward:g}, "
          f"lambda_p={best.lambda_penalty:g} ({best.mean_iterations:.2f})")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = CliConfig.load(args.config).ingest if args.config else None
    base = cfg.to_ingest() if cfg else IngestConfig()
    traces = Path(args.traces)
    if not traces.is_dir() or not os.access(traces, os.R_OK | os.X_OK):
        raise FileNotFoundError(f"cannot read trace directory {traces}")
    ingest = IngestConfig(
        percentile=args.percentile if args.percentile is not None else base.percentile,
        services_per_request=(parse_range(args.services_per_request)
                              if args.services_per_request else base.services_per_request),
        delimiter=args.delimiter if args.delimiter is not None else base.delimiter,
        lenient=args.lenient or base.lenient,
        seed=args.seed if args.seed is not None else base.seed,
        pattern=base.pattern,
    )
    files = sorted(p for p in traces.glob(ingest.pattern) if p.is_file())
    workload = ingest_traces(traces, ingest)
    buf = io.StringIO()
    write_workload(workload, buf)
    out = Path(args.out)
    _atomic_write(out, buf.getvalue())
    print(f"files read: {len(files)}, requests produced: {len(workload)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="orp-sim", description="Cost-aware VM provisioning simulator", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one strategy over a workload", formatter_class=fmt)
    _add_sim_args(p)
    p.add_argument("--strategy", default="orp", help="orp, random or greedy")
    p.add_argument("--seed", type=int, default=0, help="64-bit run seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trace", action="store_true", help="also write per-iteration trace.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare strategies over several seeds", formatter_class=fmt)
    _add_sim_args(p)
    p.add_argument("--strategies", default="orp,random,greedy", help="comma-separated strategies (>= 2)")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="reward/penalty sensitivity sweep", formatter_class=fmt)
    _add_sim_args(p, workload_required=False)
    p.add_argument("--grid", default=DEFAULT_GRID, help="lambda_r=LO:HI:STEP,lambda_p=LO:HI:STEP")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ingest", help="convert Bitbrains traces to a workload CSV", formatter_class=fmt)
    p.add_argument("--config", help="JSON config file (its `ingest` section is used)")
    p.add_argument("--traces", required=True, help="directory of per-VM trace files")
    p.add_argument("--out", required=True, help="workload CSV path")
    p.add_argument("--percentile", type=float, default=None, help="aggregation percentile (default 95)")
    p.add_argument("--services-per-request", default=None, help="N or LO:HI (default 1:5)")
    p.add_argument("--delimiter", default=None, help="trace field delimiter (default ';')")
    p.add_argument("--lenient", action="store_true", help="skip unparseable rows with a warning")
    p.add_argument("--seed", type=int, default=None, help="grouping seed (default 0)")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"orp-sim {args.command}: invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"orp-sim {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"orp-sim {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``tiermem run|sweep|gen|dump-tables|compare``.

Run settings come from an optional YAML or JSON file; flags override it.
Relative output paths are resolved against the output directory, which is
taken from ``--out-dir``, then ``$TIERMEM_OUT_DIR``, then the config file.

Exit status: 0 ok, 1 usage or configuration error, 2 data error (unreadable
or malformed input), 3 counter reconciliation failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Dict, List, Optional, Sequence

import yaml
from sklearn.base import clone

from . import __version__
from .geometry import DeviceTables
from .policy import POLICIES
from .report import MismatchedConfig, ReconciliationError, SimReport, compare, compare_csv
from .simulator import ConfigError, TieredMemorySimulator
from .trace import ParseError, WorkloadParams, generate_phase_shift, generate_skewed, read_trace, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RECONCILE = 0, 1, 2, 3
OUT_DIR_ENV = "TIERMEM_OUT_DIR"

# nested config sections -> simulator parameter names
_SECTIONS = {
    "predictor": {"m": "bloom_bits", "bloom_bits": "bloom_bits", "k": "bloom_hashes",
                  "bloom_hashes": "bloom_hashes", "D": "air_entries", "air_entries": "air_entries",
                  "promotion_threshold": "promotion_threshold", "seed": "seed"},
    "thresholds": {"hot": "hot_threshold", "cold": "cold_threshold"},
    "geometry": {"units": "units", "dram": "dram", "pcm": "pcm", "segmented": "segmented"},
    "reliability": {"g0": "aging_g0", "a": "aging_a", "b": "aging_b", "beta": "aging_beta",
                    "endurance_ne": "endurance_ne", "n_e": "endurance_ne"},
    "controller": {"max_outstanding": "max_outstanding", "issue_cycles_per_instr": "issue_cycles_per_instr",
                   "queue_capacity": "queue_capacity", "write_high": "write_high",
                   "write_starvation": "write_starvation"},
}
_OUTPUT_KEYS = ("out", "csv_dir", "log_decisions", "trace_commands", "out_dir")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_count(text) -> int:
    """Integer from ``"250000000"``, ``"2.5e8"`` or ``"250_000_000"``."""
    try:
        d = Decimal(str(text).replace("_", ""))
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if d != d.to_integral_value() or d <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(d)


@dataclass
class RunConfig:
    """Simulator parameters plus output paths for one run."""

    params: dict = field(default_factory=dict)
    trace: Optional[str] = None
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Optional[dict]) -> "RunConfig":
        data = dict(data or {})
        known = set(TieredMemorySimulator().get_params())
        cfg = cls(trace=data.pop("trace", None))
        for key in _OUTPUT_KEYS:
            if key in data:
                cfg.outputs[key] = data.pop(key)
        cfg.outputs.update(data.pop("outputs", None) or {})
        for section, names in _SECTIONS.items():
            for k, v in (data.pop(section, None) or {}).items():
                if k not in names:
                    raise ConfigError(f"unknown key {section}.{k}")
                cfg.params[names[k]] = v
        for k, v in data.items():
            if k not in known:
                raise ConfigError(f"unknown configuration key {k!r}")
            cfg.params[k] = v
        if "phase_length" in cfg.params:
            try:
                cfg.params["phase_length"] = parse_count(cfg.params["phase_length"])
            except argparse.ArgumentTypeError as e:
                raise ConfigError(f"phase_length: {e}") from None
        bad = set(cfg.outputs) - set(_OUTPUT_KEYS)
        if bad:
            raise ConfigError(f"unknown output keys {sorted(bad)}")
        return cfg

    def estimator(self) -> TieredMemorySimulator:
        sim = TieredMemorySimulator(**self.params)
        sim.check_params()
        return sim

    def out_dir(self, flag: Optional[str]) -> str:
        return flag or os.environ.get(OUT_DIR_ENV) or self.outputs.get("out_dir") or "."

    def path(self, key: str, out_dir: str) -> Optional[str]:
        p = self.outputs.get(key)
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(out_dir, p)


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from None
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as e:
        raise DataError(f"malformed config {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DataError(f"config {path} must be a mapping")
    return data


def _load_trace(path: Optional[str]):
    if not path:
        raise UsageError("no trace given (use --trace or a 'trace' config key)")
    try:
        return read_trace(path)
    except OSError as e:
        raise DataError(f"cannot read trace {path}: {e}") from None
    except (ParseError, ValueError) as e:
        raise DataError(f"bad trace {path}: {e}") from None


def _ndjson_writer(fh):
    def write(rec: dict) -> None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return write


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def execute(cfg: RunConfig, trace, out_dir: str) -> SimReport:
    """Run one configuration and write every output it asks for."""
    sim = cfg.estimator()
    log_path = cfg.path("log_decisions", out_dir)
    cmd_path = cfg.path("trace_commands", out_dir)
    if cmd_path:
        sim.set_params(record_events=True)
    handles = []
    try:
        decision_log = event_sink = None
        if log_path:
            _ensure_parent(log_path)
            handles.append(open(log_path, "w"))
            decision_log = _ndjson_writer(handles[-1])
        if cmd_path:
            _ensure_parent(cmd_path)
            handles.append(open(cmd_path, "w"))
            event_sink = _ndjson_writer(handles[-1])
        report = sim.fit(trace, decision_log=decision_log, event_sink=event_sink).report_
    finally:
        for h in handles:
            h.close()
    out = cfg.path("out", out_dir)
    if out:
        _ensure_parent(out)
        report.write_json(out)
    csv_dir = cfg.path("csv_dir", out_dir)
    if csv_dir:
        report.write_csvs(csv_dir)
    return report


# ------------------------------------------------------------------ commands


def _flag_params(args) -> dict:
    over = {}
    for flag, param in (("policy", "policy"), ("phase_length", "phase_length"), ("seed", "seed"),
                        ("name", "name"), ("hot_threshold", "hot_threshold"),
                        ("cold_threshold", "cold_threshold"), ("promotion_threshold", "promotion_threshold"),
                        ("segmented", "segmented"), ("max_outstanding", "max_outstanding")):
        v = getattr(args, flag, None)
        if v is not None:
            over[param] = v
    if getattr(args, "no_promotion", False):
        over["promotion_threshold"] = None
    return over


def cmd_run(args) -> int:
    cfg = RunConfig.from_mapping(load_config(args.config))
    cfg.params.update(_flag_params(args))
    if args.trace:
        cfg.trace = args.trace
    for key in ("out", "csv_dir", "log_decisions", "trace_commands"):
        v = getattr(args, key)
        if v is not None:
            cfg.outputs[key] = v
    cfg.outputs.setdefault("out", "report.json")
    cfg.estimator()  # validate before touching the trace
    trace = _load_trace(cfg.trace)
    out_dir = cfg.out_dir(args.out_dir)
    report = execute(cfg, trace, out_dir)
    print(f"{report.name}: policy={report.policy} cycles={report.total_cycles} "
          f"near_share={report.near_share:.4f} migrations={sum(report.migrations.values())} "
          f"-> {cfg.path('out', out_dir)}")
    return EXIT_OK


def _sweep_one(job):
    cfg, trace_path, out_dir = job
    return execute(cfg, read_trace(trace_path), out_dir)


def sweep_configs(base: RunConfig, runs: Sequence[dict]) -> List[RunConfig]:
    """Expand per-run overrides into named configs; names must be unique."""
    proto = TieredMemorySimulator(**base.params)
    out, seen = [], set()
    for over in runs:
        over = dict(over)
        outputs = over.pop("outputs", {})
        sim = clone(proto).set_params(**over)
        name = sim.name or sim.policy
        if name in seen:
            raise ConfigError(f"duplicate run name {name!r} in sweep")
        seen.add(name)
        sim.set_params(name=name)
        out.append(RunConfig(sim.get_params(), base.trace, dict(outputs)))
    return out


def cmd_sweep(args) -> int:
    data = load_config(args.config)
    runs = list(data.pop("runs", None) or [])
    base = RunConfig.from_mapping(data)
    base.params.update(_flag_params(args))
    if args.trace:
        base.trace = args.trace
    policies = args.policies.split(",") if args.policies else None
    lengths = args.phase_length_values
    if policies or lengths:
        if runs:
            raise UsageError("give either a 'runs' list in the config or --policies/--phase-lengths")
        for pol in policies or [base.params.get("policy", "mneme")]:
            for pl in lengths or [None]:
                run = {"policy": pol}
                if pl is not None:
                    run["phase_length"] = pl
                run["name"] = pol if pl is None or not lengths or len(lengths) == 1 else f"{pol}@{pl}"
                runs.append(run)
    if not runs:
        raise UsageError("sweep needs at least one run")
    configs = sweep_configs(base, runs)
    for c in configs:
        c.estimator()
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or base.outputs.get("out_dir") or "."
    if args.reports_dir:
        for c in configs:
            c.outputs["out"] = os.path.join(args.reports_dir, f"{_safe(c.params['name'])}.json")
    trace = _load_trace(base.trace)
    reports: List[SimReport] = []
    failed = None
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_sweep_one, (c, base.trace, out_dir)) for c in configs]
            for c, fut in zip(configs, futures):
                try:
                    reports.append(fut.result())
                except Exception as e:  # noqa: BLE001 - reported below, per-run
                    failed = (c.params["name"], e)
                    break
    else:
        for c in configs:
            try:
                reports.append(execute(c, trace, out_dir))
            except Exception as e:  # noqa: BLE001
                failed = (c.params["name"], e)
                break
    baseline = args.baseline or configs[0].params["name"]
    result = {"baseline": baseline, "complete": failed is None,
              "runs": [c.params["name"] for c in configs]}
    if failed:
        result["failed"] = {"name": failed[0], "error": str(failed[1])}
        result["partial"] = [r.name for r in reports]
    if reports and any(r.name == baseline for r in reports):
        result["table"] = compare(reports, baseline)
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    if args.out:
        path = args.out if os.path.isabs(args.out) else os.path.join(out_dir, args.out)
        _ensure_parent(path)
        with open(path, "w") as fh:
            fh.write(text)
    if "table" in result and not args.quiet:
        sys.stdout.write(compare_csv(result["table"]))
    if failed:
        raise failed[1]
    return EXIT_OK


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_.@" else "_" for ch in name)


def cmd_gen(args) -> int:
    gen_params = {}
    if args.params:
        gen_params.update(load_config(args.params))
    for key in ("n_accesses", "n_phases", "n_ftis", "seed", "phase_length", "tail_accesses",
                "overlap", "pages_per_fti"):
        v = getattr(args, key)
        if v is not None:
            gen_params[key] = v
    if args.hot_fraction is not None:
        gen_params["hot_fraction"] = args.hot_fraction
    try:
        wl = WorkloadParams(**gen_params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"workload parameters: {e}") from None
    try:
        trace = generate_skewed(wl) if args.kind == "skewed" else generate_phase_shift(wl)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = args.out if os.path.isabs(args.out) else os.path.join(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".",
                                                                 args.out)
    _ensure_parent(out)
    write_trace(trace, out, fmt=args.format)
    print(f"wrote {len(trace)} accesses to {out} (digest {trace.digest()[:16]})")
    return EXIT_OK


def cmd_dump_tables(args) -> int:
    data = RunConfig.from_mapping(load_config(args.config)).params.get("tables")
    try:
        tables = DeviceTables.from_dict(data)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"table configuration: {e}") from None
    chunks = {"timing": tables.timing_csv(), "bias": tables.bias_csv()}
    wanted = ["timing", "bias"] if args.table == "all" else [args.table]
    if args.csv_dir:
        os.makedirs(args.csv_dir, exist_ok=True)
        for name in wanted:
            with open(os.path.join(args.csv_dir, f"{name}.csv"), "w") as fh:
                fh.write(chunks[name])
    else:
        sys.stdout.write("\n".join(chunks[name] for name in wanted))
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = []
    for p in args.reports:
        try:
            reports.append(SimReport.read_json(p))
        except OSError as e:
            raise DataError(f"cannot read report {p}: {e}") from None
        except (ValueError, TypeError) as e:
            raise DataError(f"bad report {p}: {e}") from None
    table = compare(reports, args.baseline or reports[0].name)
    text = compare_csv(table) if args.format == "csv" else json.dumps(table, sort_keys=True, indent=2) + "\n"
    if args.out:
        _ensure_parent(args.out)
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML or JSON run configuration")
    p.add_argument("--trace", "-t", help="trace file (.csv, .bin, optionally .gz)")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--phase-length", dest="phase_length", type=parse_count)
    p.add_argument("--seed", type=int)
    p.add_argument("--hot-threshold", type=int)
    p.add_argument("--cold-threshold", type=int)
    p.add_argument("--promotion-threshold", type=int)
    p.add_argument("--no-promotion", action="store_true", help="never promote AIR entries into the FTI filters")
    p.add_argument("--max-outstanding", type=int)
    seg = p.add_mutually_exclusive_group()
    seg.add_argument("--segmented", dest="segmented", action="store_true", default=None)
    seg.add_argument("--unsegmented", dest="segmented", action="store_false")
    p.add_argument("--out-dir", help=f"base for relative output paths (else ${OUT_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tiermem", description="DRAM/PCM tiered memory simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="simulate one policy on one trace")
    _add_run_flags(p)
    p.add_argument("--name")
    p.add_argument("--out", help="report JSON path (default report.json)")
    p.add_argument("--csv-dir", help="write one CSV per metric family here")
    p.add_argument("--log-decisions", metavar="PATH", help="NDJSON log of per-phase policy decisions")
    p.add_argument("--trace-commands", metavar="PATH", help="NDJSON log of issued memory commands")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run several configurations and compare them")
    _add_run_flags(p)
    p.add_argument("--policies", help="comma separated policies to run")
    p.add_argument("--phase-lengths", dest="phase_length_values", nargs="+", type=parse_count)
    p.add_argument("--baseline", help="run name to normalize against (default: first run)")
    p.add_argument("--reports-dir", help="write each run's report JSON here")
    p.add_argument("--out", help="comparison JSON path")
    p.add_argument("--jobs", "-j", type=int, default=1)
    p.add_argument("--quiet", "-q", action="store_true")
    p.set_defaults(func=cmd_sweep, name=None)

    p = sub.add_parser("gen", help="write a synthetic trace")
    p.add_argument("--kind", choices=("skewed", "phase-shift"), default="skewed")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--params", help="YAML or JSON file of generator parameters")
    p.add_argument("--n-accesses", type=parse_count)
    p.add_argument("--n-phases", type=int)
    p.add_argument("--n-ftis", type=int)
    p.add_argument("--pages-per-fti", type=int)
    p.add_argument("--hot-fraction", type=float)
    p.add_argument("--phase-length", dest="phase_length", type=parse_count)
    p.add_argument("--tail-accesses", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("dump-tables", help="print the timing and bias tables as CSV")
    p.add_argument("--config", "-c")
    p.add_argument("--table", choices=("timing", "bias", "all"), default="all")
    p.add_argument("--csv-dir")
    p.set_defaults(func=cmd_dump_tables)

    p = sub.add_parser("compare", help="normalize saved reports against a baseline")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, MismatchedConfig) as e:
        print(f"tiermem: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError) as e:
        print(f"tiermem: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ReconciliationError as e:
        print(f"tiermem: reconciliation failed: {e}", file=sys.stderr)
        return EXIT_RECONCILE
    except OSError as e:
        print(f"tiermem: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

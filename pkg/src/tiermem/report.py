"""Run reports: reconciliation, JSON/CSV output and normalized comparison."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

SCHEMA_VERSION = 1


class ReconciliationError(RuntimeError):
    def __init__(self, counter: str, expected, actual):
        super().__init__(f"counter {counter!r} does not reconcile: expected {expected}, got {actual}")
        self.counter = counter
        self.expected = expected
        self.actual = actual


class MismatchedConfig(ValueError):
    pass


@dataclass
class SimReport:
    name: str
    policy: str
    config: dict
    trace: dict
    total_cycles: int = 0
    total_accesses: int = 0
    near_accesses: int = 0
    far_accesses: int = 0
    accesses: dict = field(default_factory=dict)
    faults: int = 0
    page_hits: int = 0
    pages: int = 0
    row_hits: int = 0
    row_misses: int = 0
    mean_latency_cycles: float = 0.0
    migrations: dict = field(default_factory=dict)
    migration_bursts: dict = field(default_factory=dict)
    channel_busy_cycles: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    reliability: dict = field(default_factory=dict)
    phases: list = field(default_factory=list)
    migration_histogram: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def near_share(self) -> float:
        return self.near_accesses / self.total_accesses if self.total_accesses else 0.0

    @property
    def fti_hit_rates(self) -> List[float]:
        return [p["fti_hit_rate"] for p in self.phases]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimReport":
        d = dict(d)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {d.get('schema_version')}")
        return cls(**d)

    @classmethod
    def read_json(cls, path) -> "SimReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def csv_tables(self) -> Dict[str, List[list]]:
        """One flat table per metric family, header row first."""
        acc = [["unit", "segment", "op", "count"]]
        for unit in sorted(self.accesses):
            for seg in ("near", "far"):
                for op in ("read", "write"):
                    acc.append([unit, seg, op, self.accesses[unit][seg][op]])
        mig = [["kind", "pages", "bursts"]]
        for kind in sorted(self.migrations):
            mig.append([kind, self.migrations[kind], self.migration_bursts.get(kind, 0)])
        phases = [["phase", "faults", "fti_hits", "fti_hit_rate", "cycle", "aging", "reliability"]]
        for p in self.phases:
            phases.append([p["phase"], p["faults"], p["fti_hits"], p["fti_hit_rate"], p["cycle"],
                           p["aging"], p["reliability"]])
        hist = [["migrations", "pages"]] + [[k, v] for k, v in self.migration_histogram.items()]
        summary = [["metric", "value"]]
        for k in ("total_cycles", "total_accesses", "near_accesses", "far_accesses", "faults",
                  "pages", "row_hits", "row_misses", "mean_latency_cycles"):
            summary.append([k, getattr(self, k)])
        summary.append(["demand_energy_pj", self.energy.get("demand_pj", 0.0)])
        summary.append(["migration_energy_pj", self.energy.get("migration_pj", 0.0)])
        summary.append(["aging", self.reliability.get("aging", 0.0)])
        summary.append(["reliability", self.reliability.get("R", 1.0)])
        return {"accesses": acc, "migrations": mig, "phases": phases, "migration_histogram": hist,
                "summary": summary}

    def write_csvs(self, directory) -> List[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for fam, rows in self.csv_tables().items():
            path = os.path.join(directory, f"{fam}.csv")
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
            paths.append(path)
        return paths


def reconcile(report: SimReport, checks: Sequence[tuple]) -> SimReport:
    """Raise on the first ``(name, expected, actual)`` triple that disagrees."""
    for name, expected, actual in checks:
        if expected != actual:
            raise ReconciliationError(name, expected, actual)
    return report


COMPARE_METRICS = ("cycles", "energy", "migrations", "migration_bursts", "aging")


def _metric(r: SimReport, metric: str) -> float:
    if metric == "cycles":
        return r.total_cycles
    if metric == "energy":
        return r.energy.get("demand_pj", 0.0) + r.energy.get("migration_pj", 0.0)
    if metric == "migrations":
        return sum(r.migrations.values())
    if metric == "migration_bursts":
        return sum(r.migration_bursts.values())
    if metric == "aging":
        return r.reliability.get("aging", 0.0)
    raise KeyError(metric)


def _ratio(v: float, base: float) -> Optional[float]:
    if base == 0:
        return 1.0 if v == 0 else None
    return v / base


def compare(reports: Sequence[SimReport], baseline_name: str) -> Dict[str, Dict[str, Optional[float]]]:
    """Ratios of each report's headline metrics against the named baseline.

    All reports must share the same trace and memory geometry.
    """
    if not reports:
        raise MismatchedConfig("nothing to compare")
    by_name: Dict[str, SimReport] = {}
    for r in reports:
        if r.name in by_name:
            raise MismatchedConfig(f"duplicate report name {r.name!r}")
        by_name[r.name] = r
    if baseline_name not in by_name:
        raise MismatchedConfig(f"baseline {baseline_name!r} not among {sorted(by_name)}")
    base = by_name[baseline_name]
    for r in reports:
        if r.trace.get("digest") != base.trace.get("digest"):
            raise MismatchedConfig(f"{r.name!r} ran on a different trace than {baseline_name!r}")
        if r.config.get("geometry") != base.config.get("geometry"):
            raise MismatchedConfig(f"{r.name!r} uses a different geometry than {baseline_name!r}")
    out = {}
    for name in sorted(by_name):
        r = by_name[name]
        out[name] = {m: _ratio(_metric(r, m), _metric(base, m)) for m in COMPARE_METRICS}
        out[name]["near_share"] = r.near_share
    return out


def compare_csv(table: Mapping[str, Mapping[str, Optional[float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(COMPARE_METRICS) + ["near_share"]
    w.writerow(["name", *cols])
    for name in sorted(table):
        w.writerow([name, *("" if table[name][c] is None else table[name][c] for c in cols)])
    return buf.getvalue()

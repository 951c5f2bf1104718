import copy
import csv
import json
import random

import pytest

from tiermem import WorkloadParams, Trace, generate_skewed, simulate
from tiermem.report import (COMPARE_METRICS, MismatchedConfig, ReconciliationError, SimReport, compare,
                            compare_csv, reconcile)


@pytest.fixture(scope="module")
def small_trace():
    return generate_skewed(WorkloadParams(n_accesses=20_000, n_phases=4))


@pytest.fixture(scope="module")
def reports(small_trace):
    return {p: simulate(small_trace, policy=p) for p in ("baseline", "nimble", "tldram", "mneme")}


def test_empty_trace_report_is_zero():
    r = simulate(Trace.empty(), policy="mneme")
    assert r.total_cycles == 0 and r.total_accesses == 0 and r.faults == 0
    assert r.reliability["R"] == 1.0 and r.reliability["aging"] == 0.0
    assert r.near_share == 0.0
    assert sum(r.migration_histogram.values()) == 0


def test_counts_partition(reports):
    for r in reports.values():
        assert r.near_accesses + r.far_accesses == r.total_accesses
        assert r.faults + r.page_hits == r.total_accesses
        assert sum(r.migration_histogram.values()) == r.pages == r.faults
        per_unit = sum(r.accesses[u][s][o] for u in r.accesses for s in ("near", "far")
                       for o in ("read", "write"))
        assert per_unit == r.total_accesses


def test_json_round_trip(reports):
    r = reports["mneme"]
    back = SimReport.from_dict(json.loads(r.to_json()))
    assert back.to_json() == r.to_json()
    bad = r.to_dict()
    bad["schema_version"] = 99
    with pytest.raises(ValueError):
        SimReport.from_dict(bad)


def test_csv_families(tmp_path, reports):
    paths = reports["nimble"].write_csvs(tmp_path)
    names = sorted(p.split("/")[-1] for p in paths)
    assert names == ["accesses.csv", "migration_histogram.csv", "migrations.csv", "phases.csv", "summary.csv"]
    rows = list(csv.reader(open(tmp_path / "accesses.csv")))
    assert rows[0] == ["unit", "segment", "op", "count"]
    assert sum(int(r[3]) for r in rows[1:]) == reports["nimble"].total_accesses


def test_reconcile_reports_first_mismatch(reports):
    r = reports["baseline"]
    assert reconcile(r, [("a", 1, 1)]) is r
    with pytest.raises(ReconciliationError) as ei:
        reconcile(r, [("a", 1, 1), ("b", 2, 3), ("c", 0, 1)])
    assert ei.value.counter == "b" and ei.value.expected == 2 and ei.value.actual == 3


def test_compare_self_is_one(reports):
    r = reports["mneme"]
    t = compare([r], "mneme")
    assert all(t["mneme"][m] == 1.0 for m in COMPARE_METRICS)


def test_compare_arithmetic(reports):
    base = copy.deepcopy(reports["baseline"])
    a, b = copy.deepcopy(base), copy.deepcopy(base)
    base.total_cycles, a.total_cycles, b.total_cycles = 100, 80, 100
    a.name, b.name = "a", "b"
    t = compare([base, a, b], "baseline")
    assert t["a"]["cycles"] == 0.80 and t["b"]["cycles"] == 1.00


def test_compare_permutation_invariant(reports):
    rs = list(reports.values())
    want = compare(rs, "baseline")
    for seed in range(5):
        random.Random(seed).shuffle(rs)
        assert compare(rs, "baseline") == want
    assert compare_csv(want).splitlines()[0].startswith("name,cycles")


def test_compare_rejects_mismatches(reports, small_trace):
    with pytest.raises(MismatchedConfig):
        compare([reports["mneme"]], "baseline")
    other = simulate(generate_skewed(WorkloadParams(n_accesses=1000)), policy="baseline", name="other")
    with pytest.raises(MismatchedConfig):
        compare([reports["baseline"], other], "baseline")
    dup = copy.deepcopy(reports["baseline"])
    with pytest.raises(MismatchedConfig):
        compare([reports["baseline"], dup], "baseline")
    geo = simulate(small_trace, policy="baseline", name="geo", pcm={"near_rows": 1024})
    with pytest.raises(MismatchedConfig):
        compare([reports["baseline"], geo], "baseline")


def test_zero_baseline_ratio(reports):
    t = compare([reports["baseline"], reports["mneme"]], "baseline")
    assert t["baseline"]["migrations"] == 1.0
    assert t["mneme"]["migrations"] is None  # baseline never migrates

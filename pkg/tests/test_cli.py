import csv
import io
import json

import pytest

from tiermem import cli
from tiermem.report import ReconciliationError, SimReport
from tiermem.simulator import ConfigError, TieredMemorySimulator
from tiermem.trace import read_trace

from test_geometry import BIAS, LATENCY


@pytest.fixture
def trace_file(tmp_path):
    p = tmp_path / "t.csv"
    assert cli.main(["gen", "--out", str(p), "--n-accesses", "20000", "--n-phases", "4"]) == 0
    return p


def test_run_writes_report(tmp_path, trace_file, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", "--policy", "mneme", "--trace", str(trace_file)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["policy"] == "mneme"


def test_run_twice_identical_bytes(tmp_path, trace_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert cli.main(["run", "--policy", "nimble", "--trace", str(trace_file), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flags_override_config(tmp_path, trace_file):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"policy: baseline\nseed: 3\ntrace: {trace_file}\n"
                   "thresholds: {hot: 7}\npredictor: {m: 256, k: 4}\nphase_length: 1e8\n")
    out = tmp_path / "r.json"
    assert cli.main(["run", "-c", str(cfg), "--policy", "mneme", "--out", str(out)]) == 0
    c = json.loads(out.read_text())["config"]
    assert c["policy"] == "mneme" and c["seed"] == 3 and c["hot_threshold"] == 7
    assert c["bloom_bits"] == 256 and c["bloom_hashes"] == 4 and c["phase_length"] == 100_000_000


def test_json_config_and_outputs_section(tmp_path, trace_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"policy": "tldram", "trace": str(trace_file),
                               "outputs": {"out": "x/rep.json", "csv_dir": "x/csv"}}))
    assert cli.main(["run", "-c", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "x" / "rep.json").exists() and (tmp_path / "x" / "csv" / "summary.csv").exists()


def test_env_out_dir(tmp_path, trace_file, monkeypatch):
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "envout"))
    assert cli.main(["run", "--trace", str(trace_file), "--out", "r.json"]) == 0
    assert (tmp_path / "envout" / "r.json").exists()
    # the flag wins over the environment
    assert cli.main(["run", "--trace", str(trace_file), "--out", "r.json", "--out-dir",
                     str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "r.json").exists()


def test_ndjson_logs(tmp_path, trace_file):
    d, c = tmp_path / "d.ndjson", tmp_path / "c.ndjson"
    assert cli.main(["run", "--policy", "mneme", "--trace", str(trace_file), "--out", str(tmp_path / "r.json"),
                     "--log-decisions", str(d), "--trace-commands", str(c)]) == 0
    decisions = [json.loads(line) for line in d.read_text().splitlines()]
    assert [x["phase"] for x in decisions] == [0, 1, 2]
    cmds = [json.loads(line) for line in c.read_text().splitlines()]
    rep = json.loads((tmp_path / "r.json").read_text())
    assert sum(1 for x in cmds if x["kind"] == "demand") == rep["total_accesses"]
    assert {"cycle", "command", "bank", "row", "segment"} <= set(cmds[0])


@pytest.mark.parametrize("argv,code", [
    (["run", "--bogus"], 1),
    (["run", "--policy", "lru", "--trace", "x"], 1),
    (["run"], 1),
    (["run", "--trace", "/nonexistent/t.csv"], 2),
    (["compare", "/nonexistent/r.json"], 2),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _exit_code(argv) == code


def _exit_code(argv):
    try:
        return cli.main(argv)
    except SystemExit as e:  # argparse usage errors
        return e.code


def test_bad_trace_and_config_are_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,0x1,R,0x0\n1,0x1,Q,0x0\n")
    assert cli.main(["run", "--trace", str(bad), "--out", str(tmp_path / "r.json")]) == 2
    cfg = tmp_path / "c.yaml"
    cfg.write_text("policy: [unclosed\n")
    assert cli.main(["run", "-c", str(cfg)]) == 2
    cfg.write_text("no_such_key: 1\n")
    assert cli.main(["run", "-c", str(cfg), "--trace", str(bad)]) == 1


def test_invalid_combination_rejected_before_run(tmp_path, trace_file):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("geometry: {units: [PCM]}\n")
    assert cli.main(["run", "-c", str(cfg), "--policy", "tldram", "--trace", str(trace_file)]) == 1


def test_reconciliation_failure_exit_code(tmp_path, trace_file, monkeypatch):
    def boom(self, *a, **k):
        raise ReconciliationError("faults", 1, 2)
    monkeypatch.setattr(TieredMemorySimulator, "fit", boom)
    assert cli.main(["run", "--trace", str(trace_file), "--out", str(tmp_path / "r.json")]) == 3


def test_sweep_single_config_ratios_one(tmp_path, trace_file, capsys):
    out = tmp_path / "s.json"
    assert cli.main(["sweep", "--trace", str(trace_file), "--policies", "mneme", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["complete"] and all(v == 1.0 for k, v in res["table"]["mneme"].items() if k != "near_share")


def test_sweep_baseline_vs_mneme(tmp_path, trace_file):
    out = tmp_path / "s.json"
    assert cli.main(["sweep", "--trace", str(trace_file), "--policies", "baseline,mneme", "-q",
                     "--out", str(out), "--reports-dir", str(tmp_path / "reps")]) == 0
    t = json.loads(out.read_text())["table"]
    assert t["mneme"]["near_share"] > t["baseline"]["near_share"]
    assert SimReport.read_json(tmp_path / "reps" / "mneme.json").policy == "mneme"


def test_sweep_duplicate_names(tmp_path, trace_file):
    base = cli.RunConfig.from_mapping({"trace": str(trace_file)})
    with pytest.raises(ConfigError):
        cli.sweep_configs(base, [{"policy": "mneme"}, {"policy": "mneme"}])
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"trace: {trace_file}\nruns:\n  - {{name: a, policy: mneme}}\n  - {{name: a, policy: nimble}}\n")
    assert cli.main(["sweep", "-c", str(cfg), "-q"]) == 1


def test_sweep_runs_from_config(tmp_path, trace_file):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"trace: {trace_file}\nruns:\n  - {{name: base, policy: baseline}}\n"
                   "  - {name: ours, policy: mneme, seed: 1}\n")
    out = tmp_path / "s.json"
    assert cli.main(["sweep", "-c", str(cfg), "-q", "--out", str(out), "--baseline", "base"]) == 0
    assert sorted(json.loads(out.read_text())["table"]) == ["base", "ours"]


def test_sweep_partial_failure_is_flagged(tmp_path, trace_file, monkeypatch):
    real = cli.execute
    calls = []

    def flaky(cfg, trace, out_dir):
        calls.append(cfg.params["name"])
        if len(calls) == 2:
            raise ReconciliationError("pages", 1, 0)
        return real(cfg, trace, out_dir)
    monkeypatch.setattr(cli, "execute", flaky)
    out = tmp_path / "s.json"
    rc = cli.main(["sweep", "--trace", str(trace_file), "--policies", "baseline,mneme,nimble", "-q",
                   "--out", str(out)])
    assert rc == 3
    res = json.loads(out.read_text())
    assert not res["complete"] and res["failed"]["name"] == "mneme" and res["partial"] == ["baseline"]


def test_sweep_phase_lengths_monotone(tmp_path):
    tr = tmp_path / "ps.bin"
    wl = tmp_path / "wl.yaml"
    wl.write_text("n_phases: 10\nshift_phases: [5]\nn_accesses: 100000\n")
    assert cli.main(["gen", "--kind", "phase-shift", "--params", str(wl), "--format", "bin", "--out", str(tr)]) == 0
    out = tmp_path / "s.json"
    assert cli.main(["sweep", "--trace", str(tr), "--policies", "mneme", "--phase-lengths", "100e6", "250e6",
                     "500e6", "-q", "--out", str(out), "--reports-dir", str(tmp_path / "r")]) == 0
    cycles = [SimReport.read_json(tmp_path / "r" / f"mneme@{n}.json").total_cycles
              for n in (100_000_000, 250_000_000, 500_000_000)]
    assert cycles[0] <= cycles[1] <= cycles[2]


def test_gen_formats(tmp_path):
    for name, fmt in (("a.csv.gz", "csv"), ("b.bin", "bin")):
        assert cli.main(["gen", "--out", str(tmp_path / name), "--format", fmt, "--n-accesses", "500",
                         "--seed", "5"]) == 0
    assert read_trace(tmp_path / "a.csv.gz") == read_trace(tmp_path / "b.bin")
    assert cli.main(["gen", "--out", str(tmp_path / "c.csv"), "--hot-fraction", "2"]) == 1


def test_dump_tables_golden(capsys, tmp_path):
    assert cli.main(["dump-tables", "--table", "timing"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert {(r["unit"], r["segment"], r["op"]): tuple(r[k] for k in ("tRCD", "tCL", "tBL", "tRP", "tRC"))
            for r in rows} == LATENCY
    assert cli.main(["dump-tables", "--csv-dir", str(tmp_path)]) == 0
    bias = {r["op"]: r for r in csv.DictReader(open(tmp_path / "bias.csv"))}
    for (seg, op), v in BIAS.items():
        assert bias[op]["intermediate" if seg == "near" else "farthest"] == v


def test_compare_subcommand(tmp_path, trace_file, capsys):
    for pol in ("baseline", "mneme"):
        assert cli.main(["run", "--policy", pol, "--trace", str(trace_file), "--out",
                         str(tmp_path / f"{pol}.json")]) == 0
    capsys.readouterr()
    assert cli.main(["compare", str(tmp_path / "mneme.json"), str(tmp_path / "baseline.json"),
                     "--baseline", "baseline"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("name,cycles") and lines[1].startswith("baseline,1.0,1.0")
    assert cli.main(["compare", str(tmp_path / "mneme.json"), "--baseline", "nope"]) == 1


def test_parse_count():
    assert cli.parse_count("2.5e8") == 250_000_000
    assert cli.parse_count("100_000") == 100_000
    with pytest.raises(Exception):
        cli.parse_count("1.5")

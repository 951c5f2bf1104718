"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the collected lines are
printed again in the terminal summary.
"""
import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from tiermem import WorkloadParams, generate_phase_shift, generate_skewed, simulate
from tiermem.controller import MemoryController
from tiermem.geometry import (DRAM_DEFAULT, PCM_DEFAULT, CellOp, Op, PhysicalLocation, Segment, Unit, decode,
                              encode, lookup_bias, lookup_timing)
from tiermem.policy import PageManager, PhaseClock
from tiermem.predictor import BloomFilter, FTIPredictor, expected_fp_rate
from tiermem.reliability import (AgingAccumulator, EnduranceInputs, access_stress, area_overhead,
                                 endurance_lifetime, reliability)

from conftest import ACCEPTANCE_LINES
from test_geometry import BIAS, LATENCY

DEFAULTS = {Unit.DRAM: DRAM_DEFAULT, Unit.PCM: PCM_DEFAULT}


def verdict(n, ok, what, detail=""):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {what}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_golden_tables():
    t0 = time.perf_counter()
    bad = []
    for key, cells in LATENCY.items():
        t = lookup_timing(*key)
        if (t.tRCD, t.tCL, t.tBL, t.tRP, t.tRC) != tuple(Fraction(c) for c in cells):
            bad.append(key)
    for (seg, op), v in BIAS.items():
        if lookup_bias(seg, CellOp(op)) != Fraction(v):
            bad.append((seg, op))
    dt = time.perf_counter() - t0
    verdict(1, not bad and dt < 1, "timing and bias tables exact",
            f"{len(LATENCY)} timing rows x 5 cells, {len(BIAS)} bias cells, mismatches={bad}, {dt:.3f}s")


def test_02_segment_decode():
    t0 = time.perf_counter()
    rng = random.Random(2)
    wrong = far_bit22 = 0
    for _ in range(10_000):
        a = rng.randrange(PCM_DEFAULT.capacity_bytes)
        loc = decode(a, PCM_DEFAULT)
        select = a >> 22 & 0b111  # bit 22 and the row bits above it
        want = Segment.NEAR if select == 0 else Segment.FAR
        if loc.segment is not want or encode(loc, PCM_DEFAULT) != a:
            wrong += 1
        if a >> 22 & 1:
            far_bit22 += loc.segment is not Segment.FAR
    # with bits 23 and 24 clear the select field is bit 22 alone
    for _ in range(10_000):
        a = rng.randrange(PCM_DEFAULT.capacity_bytes) & ~(0b11 << 23)
        want = Segment.FAR if a >> 22 & 1 else Segment.NEAR
        wrong += decode(a, PCM_DEFAULT).segment is not want
    dt = time.perf_counter() - t0
    verdict(2, wrong == 0 and far_bit22 == 0 and dt < 1, "bit-22 segment select and decode/encode identity",
            f"mismatches={wrong}, bit22=1 not far={far_bit22}, {dt:.3f}s")


def test_03_bloom_behaviour():
    t0 = time.perf_counter()
    rng = random.Random(3)
    false_neg = 0
    for inst in range(10_000):
        f = BloomFilter(128, 3, inst)
        members = []
        for _ in range(rng.randint(1, 12)):
            if members and rng.random() < 0.5:
                false_neg += not f.query(rng.choice(members))
            else:
                x = rng.getrandbits(64)
                f.insert(x)
                members.append(x)
        false_neg += sum(not f.query(x) for x in members)
    hits = probes = 0
    for inst in range(2000):
        f = BloomFilter(128, 3, 10_000 + inst)
        members = {rng.getrandbits(64) for _ in range(8)}
        for x in members:
            f.insert(x)
        while probes < (inst + 1) * 50:
            x = rng.getrandbits(64)
            if x in members:
                continue
            probes += 1
            hits += f.query(x)
    p = expected_fp_rate(128, 3, 8)
    sd = math.sqrt(p * (1 - p) / probes)
    z = (hits / probes - p) / sd
    dt = time.perf_counter() - t0
    verdict(3, false_neg == 0 and abs(z) <= 3, "no false negatives; FP rate within 3 sigma",
            f"false_neg={false_neg}, measured={hits / probes:.5f}, predicted={p:.5f}, z={z:+.2f}, "
            f"probes={probes}, {dt:.2f}s")


def test_04_four_case_allocation():
    pred = FTIPredictor()
    w, r, both, none = 0x10, 0x20, 0x30, 0x40
    pred.fti_w.insert(w)
    pred.fti_r.insert(r)
    pred.fti_w.insert(both)
    pred.fti_r.insert(both)
    table = [  # (pc, FTI_W hit, FTI_R hit, expected unit or None for either, expected segment)
        (w, True, False, Unit.DRAM, Segment.NEAR),
        (r, False, True, Unit.PCM, Segment.NEAR),
        (both, True, True, Unit.DRAM, Segment.NEAR),
        (none, False, False, None, Segment.FAR),
    ]
    mgr = PageManager("mneme", DEFAULTS, pred, seed=4)
    got = []
    ok = True
    for vpn, (pc, hw, hr, unit, seg) in enumerate(table):
        assert (pred.fti_w.query(pc), pred.fti_r.query(pc)) == (hw, hr)
        pte, _, _ = mgr.allocate_on_fault(pc, vpn)
        got.append(f"{pte.unit.value}-{pte.segment.value}")
        ok &= pte.segment is seg and (unit is None or pte.unit is unit)
    verdict(4, ok, "W-only->DRAM near, R-only->PCM near, both->DRAM near, neither->far", ", ".join(got))


def test_05_degenerate_mneme():
    trace = generate_skewed(WorkloadParams(n_accesses=200_000))
    mgr = PageManager("mneme", DEFAULTS, FTIPredictor(promotion_threshold=None), seed=0)
    clock = PhaseClock(100_000_000)
    segs = []
    for req in trace:
        for _ in range(clock.crossings(req.instr_index)):
            mgr.on_phase_boundary()
        for ev in mgr.on_access(req):
            if type(ev).__name__ == "Fault":
                segs.append(ev.segment)
    far = sum(s is Segment.FAR for s in segs)
    # the full simulator agrees: no FTI hit in any phase
    rep = simulate(trace, policy="mneme", promotion_threshold=None)
    hits = sum(p["fti_hits"] for p in rep.phases)
    verdict(5, far == len(segs) and hits == 0 and rep.faults == len(segs),
            "empty filters + no promotion -> every allocation in a far segment",
            f"far={far}/{len(segs)} allocations, simulator fti_hits={hits}")


def test_06_directional_performance():
    trace = generate_skewed(WorkloadParams(n_accesses=10_000_000))
    runs = {}
    for pol in ("baseline", "mneme"):
        t0 = time.perf_counter()
        runs[pol] = (simulate(trace, policy=pol), time.perf_counter() - t0)
    (b, tb), (m, tm) = runs["baseline"], runs["mneme"]
    speed = 1 - m.total_cycles / b.total_cycles
    share = m.near_share / b.near_share
    ok = speed >= 0.05 and share >= 2 and tb < 60 and tm < 60
    verdict(6, ok, "MNEME >=5% fewer cycles and >=2x near share than Baseline on 1e7 accesses",
            f"cycles {m.total_cycles} vs {b.total_cycles} ({speed:.1%} fewer), near share "
            f"{m.near_share:.3f} vs {b.near_share:.3f} ({share:.2f}x), runtime {tm:.1f}s / {tb:.1f}s")


def test_07_migration_inequality():
    t0 = time.perf_counter()
    trace = generate_skewed(WorkloadParams(n_phases=2, n_accesses=200_000, tail_accesses=2_000))
    m = simulate(trace, policy="mneme")
    n = simulate(trace, policy="nimble")
    mc, nc = m.migration_bursts["cross_unit"], n.migration_bursts["cross_unit"]
    dt = time.perf_counter() - t0
    verdict(7, nc > 0 and mc <= 0.5 * nc and dt < 60, "MNEME cross-unit bursts <= 0.5 x Nimble-like",
            f"{mc} vs {nc} ({mc / nc:.3f}), intra-bank pages={m.migrations['intra_bank']}, {dt:.1f}s")


def test_08_intra_bank_channel_invariant():
    # read-only workload: promotions and demotions all stay inside PCM banks
    trace = generate_skewed(WorkloadParams(n_accesses=100_000, write_heavy_fraction=0.0, rw_bias=1.0))
    r = simulate(trace, policy="mneme")
    only_intra = r.migrations["intra_bank"] > 0 and r.migrations["cross_unit"] == r.migrations["cross_bank"] == 0
    chan_mig = r.channel_busy_cycles["migration"]
    bursts = sum(r.migration_bursts.values())
    verdict(8, only_intra and bursts == 0 and chan_mig == 0, "intra-bank-only run uses no channel bursts",
            f"intra-bank pages={r.migrations['intra_bank']}, migration bursts={bursts}, "
            f"migration channel cycles={chan_mig}")


def test_09_reliability_oracles():
    t0 = time.perf_counter()
    rng = random.Random(9)
    ok_e = True
    for _ in range(100):
        n_wl, n_e = rng.randint(1, 10 ** 7), rng.randint(1, 10 ** 8)
        n_f = Fraction(rng.randint(1, 10 ** 6), rng.randint(1, 10 ** 3))
        ok_e &= endurance_lifetime(EnduranceInputs(n_wl, n_f, n_e)) == Fraction(n_wl * n_e) / n_f
    ok_add = ok_ineq = True
    for _ in range(100):
        ops = [rng.choice((Op.READ, Op.WRITE)) for _ in range(rng.randint(1, 30))]
        cut = rng.randint(0, len(ops))
        for seg in Segment:
            acc = [access_stress(Unit.PCM, seg, o) for o in ops]
            ok_add &= (AgingAccumulator().extend(acc).aging
                       == AgingAccumulator().extend(acc[:cut]).aging + AgingAccumulator().extend(acc[cut:]).aging)
        near = AgingAccumulator().extend(access_stress(Unit.PCM, Segment.NEAR, o) for o in ops).aging
        far = AgingAccumulator().extend(access_stress(Unit.PCM, Segment.FAR, o) for o in ops).aging
        ok_ineq &= near < far
    r0 = reliability(0)
    dt = time.perf_counter() - t0
    verdict(9, ok_e and ok_add and ok_ineq and r0 == 1.0 and dt < 1,
            "endurance exact, aging additive, near < far aging, R(0) = 1",
            f"endurance={ok_e}, additivity={ok_add}, near<far={ok_ineq}, R(0)={r0}, {dt:.3f}s")


def test_10_area_arithmetic():
    dram = float(area_overhead(Fraction("11.5"), Fraction("115.2"), 512)) * 100
    pcm = float(area_overhead(Fraction("9.6"), 384, 4096, extra_isolation=2)) * 100
    got = (f"{dram:.3g}", f"{pcm:.2g}")
    verdict(10, got == ("1.83", "0.43"), "area overhead 1.83% DRAM and 0.43% PCM",
            f"DRAM={dram:.4f}%, PCM={pcm:.4f}%")


def test_11_determinism_and_frfcfs():
    trace = generate_skewed(WorkloadParams(n_accesses=50_000, n_phases=4))
    same = all(simulate(trace, policy=p, seed=7).to_json() == simulate(trace, policy=p, seed=7).to_json()
               for p in ("baseline", "nimble", "tldram", "mneme"))

    def dram_addr(row, col):
        return encode(PhysicalLocation(Unit.DRAM, 0, 0, 0, 0, 0, row, col, 0, Segment.NEAR), DRAM_DEFAULT)
    c = MemoryController(DEFAULTS, record_events=True)
    opener = c.enqueue(Unit.DRAM, dram_addr(5, 0), Segment.NEAR, False, 0)
    c.drain()
    now = c.demand_result(opener)["end"]
    older_miss = c.enqueue(Unit.DRAM, dram_addr(7, 0), Segment.NEAR, False, now)
    hit = c.enqueue(Unit.DRAM, dram_addr(5, 1), Segment.NEAR, False, now)
    later = c.enqueue(Unit.DRAM, dram_addr(7, 1), Segment.NEAR, False, now)
    first = c.schedule(Unit.DRAM, 0, now)
    c.drain()
    order = sorted((older_miss, hit, later), key=lambda s: c.demand_result(s)["start"])
    ok = same and first == hit and order == [hit, older_miss, later]
    names = {older_miss: "old-miss", hit: "hit", later: "new-miss"}
    verdict(11, ok, "byte-identical reruns; FR-FCFS serves the row hit first",
            f"identical={same}, service order={','.join(names[s] for s in order)}")


def test_12_phase_shift_adaptation():
    t0 = time.perf_counter()
    shift = 5
    trace = generate_phase_shift(WorkloadParams(n_phases=10, shift_phases=(shift,), n_accesses=300_000))
    hr = simulate(trace, policy="mneme").fti_hit_rates
    dip = hr[shift]
    dt = time.perf_counter() - t0
    ok = dip < hr[shift - 1] and hr[-1] > dip and dt < 60
    verdict(12, ok, "FTI hit rate dips at the shift and recovers",
            "series=" + ",".join(f"{h:.2f}" for h in hr) + f", {dt:.1f}s")

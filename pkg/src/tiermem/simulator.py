"""The trace-driven simulator, exposed as a scikit-learn style estimator.

    >>> sim = TieredMemorySimulator(policy="mneme", seed=1)
    >>> report = sim.fit(trace).report_

``fit`` consumes a :class:`~tiermem.trace.Trace`, drives the page manager and
the memory controller through it and stores a reconciled
:class:`~tiermem.report.SimReport` in ``report_``.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable, Dict, Optional

from sklearn.base import BaseEstimator

from . import __version__
from .controller import SEG_CODE, UNIT_CODE, MemoryController, audit_intervals, event_dict
from .geometry import (DRAM_DEFAULT, LINE_SIZE, PAGE_SIZE, PCM_DEFAULT, DeviceTables, MemoryGeometry,
                       Op, Segment, Unit, geometry_from_dict)
from .policy import POLICIES, PageManager
from .predictor import FTIPredictor
from .reliability import (AgingAccumulator, EnduranceInputs, EnergyLedger, access_stress,
                          endurance_lifetime, energy_totals, reliability_and_lifetime)
from .report import SimReport, reconcile
from .trace import Trace

SEGMENTED_BY_DEFAULT = {"baseline": False, "nimble": False, "tldram": True, "mneme": True}
SECONDS_PER_YEAR = 365 * 24 * 3600
CHUNK = 1 << 16  # trace records converted to Python objects at a time


class ConfigError(ValueError):
    pass


def _rational(x):
    """Exact value for ints and decimal strings such as ``"1e-12"``; floats pass through."""
    if isinstance(x, str):
        return Fraction(x)
    return x


class TieredMemorySimulator(BaseEstimator):
    """Simulate one policy on one memory configuration.

    Geometry overrides are plain mappings (``dram``/``pcm``); ``units`` picks
    which memory units exist.  ``segmented=None`` uses the policy's own
    default: bitline segmentation is on for ``tldram`` and ``mneme`` only.
    ``max_outstanding`` caps in-flight demand requests from the front end and
    ``issue_cycles_per_instr`` spaces requests by their instruction distance.
    """

    def __init__(self, policy: str = "mneme", name: Optional[str] = None,
                 phase_length: int = 100_000_000, hot_threshold: int = 32, cold_threshold: int = 0,
                 bloom_bits: int = 128, bloom_hashes: int = 3, air_entries: int = 8,
                 promotion_threshold: Optional[int] = 64, seed: int = 0,
                 units=("DRAM", "PCM"), dram: Optional[dict] = None, pcm: Optional[dict] = None,
                 segmented: Optional[bool] = None, tables: Optional[dict] = None,
                 energy: Optional[dict] = None, aging_g0="1e-12", aging_a=2, aging_b=1, aging_beta=1,
                 endurance_ne: int = 10 ** 7, max_outstanding: int = 16,
                 issue_cycles_per_instr=0, queue_capacity: int = 64, write_high: int = 32,
                 write_starvation: int = 4096, record_events: bool = False):
        self.policy = policy
        self.name = name
        self.phase_length = phase_length
        self.hot_threshold = hot_threshold
        self.cold_threshold = cold_threshold
        self.bloom_bits = bloom_bits
        self.bloom_hashes = bloom_hashes
        self.air_entries = air_entries
        self.promotion_threshold = promotion_threshold
        self.seed = seed
        self.units = units
        self.dram = dram
        self.pcm = pcm
        self.segmented = segmented
        self.tables = tables
        self.energy = energy
        self.aging_g0 = aging_g0
        self.aging_a = aging_a
        self.aging_b = aging_b
        self.aging_beta = aging_beta
        self.endurance_ne = endurance_ne
        self.max_outstanding = max_outstanding
        self.issue_cycles_per_instr = issue_cycles_per_instr
        self.queue_capacity = queue_capacity
        self.write_high = write_high
        self.write_starvation = write_starvation
        self.record_events = record_events

    # ----------------------------------------------------------- validation

    def geometries(self) -> Dict[Unit, MemoryGeometry]:
        try:
            units = [Unit(str(u).upper()) for u in self.units]
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not units or len(set(units)) != len(units):
            raise ConfigError(f"units must list DRAM and/or PCM once each, got {self.units!r}")
        out = {}
        for u in units:
            base = DRAM_DEFAULT if u is Unit.DRAM else PCM_DEFAULT
            over = self.dram if u is Unit.DRAM else self.pcm
            try:
                out[u] = geometry_from_dict(dict(over), base) if over else base
            except (ValueError, TypeError) as e:
                raise ConfigError(f"{u.value} geometry: {e}") from None
        return out

    def check_params(self) -> Dict[Unit, MemoryGeometry]:
        """Validate the configuration up front; returns the resolved geometries."""
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        geoms = self.geometries()
        if self.policy in ("mneme", "nimble") and set(geoms) != {Unit.DRAM, Unit.PCM}:
            raise ConfigError(f"policy {self.policy!r} needs both DRAM and PCM units")
        if self.policy == "tldram" and Unit.DRAM not in geoms:
            raise ConfigError("policy 'tldram' needs a DRAM unit")
        if int(self.phase_length) <= 0:
            raise ConfigError("phase_length must be positive")
        if self.max_outstanding < 1 or self.queue_capacity < 1:
            raise ConfigError("max_outstanding and queue_capacity must be at least 1")
        if self.hot_threshold < 0 or self.cold_threshold < 0:
            raise ConfigError("thresholds must be non-negative")
        if self.promotion_threshold is not None and self.promotion_threshold < 0:
            raise ConfigError("promotion_threshold must be non-negative or None")
        if self.bloom_bits < 1 or self.bloom_hashes < 1 or self.air_entries < 1:
            raise ConfigError("bloom_bits, bloom_hashes and air_entries must be positive")
        if self.aging_beta <= 0:
            raise ConfigError("aging_beta must be positive")
        try:
            if _rational(self.aging_g0) <= 0:
                raise ConfigError("aging_g0 must be positive")
        except (ValueError, TypeError):
            raise ConfigError(f"aging_g0 must be a number, got {self.aging_g0!r}") from None
        try:
            self._tables = DeviceTables.from_dict(self.tables)
            self._energy = EnergyLedger.from_dict(self.energy)
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"table configuration: {e}") from None
        return geoms

    def resolved_config(self, geoms: Dict[Unit, MemoryGeometry]) -> dict:
        params = self.get_params()
        params["units"] = [u.value for u in geoms]
        params["segmented"] = self._segmented()
        params["geometry"] = {u.value: g.to_dict() for u, g in geoms.items()}
        params["energy"] = self._energy.to_dict()
        params["tables"] = {"timing_csv": self._tables.timing_csv(), "bias_csv": self._tables.bias_csv()}
        params["version"] = __version__
        params.pop("dram")
        params.pop("pcm")
        return params

    def _segmented(self) -> bool:
        return SEGMENTED_BY_DEFAULT[self.policy] if self.segmented is None else bool(self.segmented)

    # ------------------------------------------------------------------ run

    def fit(self, X: Trace, y=None, decision_log: Optional[Callable[[dict], None]] = None,
            event_sink: Optional[Callable[[dict], None]] = None, predictor: Optional[FTIPredictor] = None):
        geoms = self.check_params()
        trace = X
        seg = self._segmented()
        if predictor is None and self.policy == "mneme":
            predictor = FTIPredictor(self.bloom_bits, self.bloom_hashes, self.air_entries,
                                     self.promotion_threshold, self.seed)
        mgr = PageManager(self.policy, geoms, predictor, self.hot_threshold, self.cold_threshold,
                          seed=self.seed, decision_log=decision_log)
        ctrl = MemoryController(geoms, self._tables, {u: seg for u in geoms}, self.queue_capacity,
                                self.write_high, self.write_starvation, self.record_events,
                                self.max_outstanding, self.issue_cycles_per_instr)
        self.manager_, self.controller_ = mgr, ctrl
        phase_len = int(self.phase_length)
        aging_samples = [(0, Fraction(0))]

        page_table = mgr.page_table
        count_access = mgr.count_access
        ucode = {u: UNIT_CODE[u] for u in Unit}
        scode = {s: SEG_CODE[s] for s in Segment}
        b_unit, b_addr, b_seg, b_w, b_instr = [], [], [], [], []

        def flush():
            if b_addr:
                ctrl.submit_batch(b_unit, b_addr, b_seg, b_w, b_instr)
                for lst in (b_unit, b_addr, b_seg, b_w, b_instr):
                    lst.clear()

        hits = 0
        cur_phase = 0
        n = len(trace)
        for lo in range(0, n, CHUNK):
            instrs = trace.instr[lo:lo + CHUNK].tolist()
            pcs = trace.pc[lo:lo + CHUNK].tolist()
            writes = trace.is_write[lo:lo + CHUNK].tolist()
            vaddrs = trace.vaddr[lo:lo + CHUNK].tolist()
            for i in range(len(instrs)):
                instr = instrs[i]
                if instr // phase_len > cur_phase:
                    flush()
                    while instr // phase_len > cur_phase:
                        self._boundary(mgr, ctrl)
                        cur_phase += 1
                        aging_samples.append((ctrl.now, self._aging(ctrl).aging))
                vaddr = vaddrs[i]
                vpn = vaddr // PAGE_SIZE
                pte = page_table.get(vpn)
                if pte is None:
                    pte, _fault, moves = mgr.allocate_on_fault(pcs[i], vpn)
                    if moves:
                        flush()
                        for mv in moves:
                            ctrl.migrate(mv)
                else:
                    hits += 1
                is_write = writes[i]
                count_access(pte, is_write)
                b_unit.append(ucode[pte.unit])
                b_addr.append(pte.frame | (vaddr % PAGE_SIZE))
                b_seg.append(scode[pte.segment])
                b_w.append(is_write)
                b_instr.append(instr)
            flush()
        ctrl.drain()
        total = ctrl.last_finish
        aging_acc = self._aging(ctrl)
        aging_samples.append((total, aging_acc.aging))
        self.report_ = self._finalize(trace, mgr, ctrl, geoms, hits, aging_acc, aging_samples, total)
        if event_sink is not None:
            for rec in ctrl.events:
                event_sink(event_dict(rec))
        return self

    def _boundary(self, mgr: PageManager, ctrl: MemoryController) -> None:
        for mv in mgr.on_phase_boundary():
            ctrl.migrate(mv)

    def _aging(self, ctrl: MemoryController) -> AgingAccumulator:
        acc = AgingAccumulator(_rational(self.aging_g0), _rational(self.aging_a), _rational(self.aging_b),
                               self.aging_beta)
        for counts in (ctrl.effective_counts, ctrl.migration_line_counts):
            for (unit, seg, is_w), n in counts.items():
                stress = access_stress(unit, seg, Op.WRITE if is_w else Op.READ, self._tables)
                if stress is not None and n:
                    acc.add(*stress, n=n)
        return acc

    # ------------------------------------------------------------- finalize

    def _finalize(self, trace, mgr, ctrl, geoms, hits, aging_acc, aging_samples, total) -> SimReport:
        n = len(trace)
        accesses = {}
        for u in geoms:
            accesses[u.value] = {s.value: {"read": ctrl.demand_counts[(u, s, False)],
                                           "write": ctrl.demand_counts[(u, s, True)]} for s in Segment}
        near = sum(v["near"]["read"] + v["near"]["write"] for v in accesses.values())
        far = sum(v["far"]["read"] + v["far"]["write"] for v in accesses.values())
        kinds = ("intra_bank", "cross_bank", "cross_unit")
        migrations = {k: ctrl.migrations[k] for k in kinds}
        lines_per_page = PAGE_SIZE // LINE_SIZE
        mig_bursts = {k: ctrl.migration_bursts_by_kind[k] for k in kinds}
        chans = list(ctrl.channels())
        busy_demand = sum(c.demand_cycles for _, _, c in chans)
        busy_mig = sum(c.migration_cycles for _, _, c in chans)
        demand_pj, mig_pj = energy_totals(self._energy, ctrl.effective_counts, ctrl.demand_bursts,
                                          ctrl.migration_line_counts, ctrl.migration_bursts)
        beta = self.aging_beta
        r_series, l_a = reliability_and_lifetime(aging_samples, beta)
        stats = mgr.phase_stats
        phases = []
        for i, st in enumerate(stats):
            cyc, ag = aging_samples[i + 1] if i + 1 < len(aging_samples) else aging_samples[-1]
            phases.append({"phase": st.phase, "faults": st.faults, "fti_hits": st.fti_hits,
                           "fti_hit_rate": st.hit_rate, "cycle": cyc, "aging": float(ag),
                           "reliability": r_series[min(i + 1, len(r_series) - 1)]})
        report = SimReport(
            name=self.name or self.policy, policy=self.policy,
            config=self.resolved_config(geoms),
            trace={"digest": trace.digest(), "n_accesses": n},
            total_cycles=total, total_accesses=n, near_accesses=near, far_accesses=far,
            accesses=accesses, faults=mgr.faults, page_hits=hits, pages=len(mgr.page_table),
            row_hits=ctrl.row_hits, row_misses=ctrl.row_misses,
            mean_latency_cycles=ctrl.latency_sum / n if n else 0.0,
            migrations=migrations, migration_bursts=mig_bursts,
            channel_busy_cycles={"demand": busy_demand, "migration": busy_mig},
            energy={"demand_pj": demand_pj, "migration_pj": mig_pj,
                    "provenance": self._energy.to_dict()["provenance"]},
            reliability=self._reliability_section(geoms, ctrl, aging_acc, r_series, l_a, total),
            phases=phases, migration_histogram=mgr.migration_histogram(),
        )
        mgr.check_invariants()
        checks = [
            ("faults+page_hits", n, mgr.faults + hits),
            ("near+far", n, near + far),
            ("demand_bursts", n, ctrl.demand_bursts),
            ("channel_busy", sum(c.busy_cycles for _, _, c in chans), busy_demand + busy_mig),
            ("migration_bursts", ctrl.migration_bursts, sum(mig_bursts.values())),
            ("stream_bursts", 2 * lines_per_page * (migrations["cross_unit"] + migrations["cross_bank"]),
             mig_bursts["cross_unit"] + mig_bursts["cross_bank"]),
            ("intra_bank_bursts", 0, mig_bursts["intra_bank"]),
            ("histogram", report.pages, sum(report.migration_histogram.values())),
            ("pages", mgr.faults, report.pages),
            ("phase_faults", mgr.faults, sum(p["faults"] for p in phases)),
            ("outstanding", 0, ctrl.n_outstanding),
        ]
        if ctrl.record_events:
            demand_ev = sum(1 for e in ctrl.events if e[8] == "demand")
            checks.append(("event_log_demand", n, demand_ev))
            stream_ev = sum(1 for e in ctrl.events if e[2] in ("MIG-RD", "MIG-WR"))
            checks.append(("event_log_migration_bursts", ctrl.migration_bursts, stream_ev))
            overlaps = audit_intervals(ctrl.events)
            checks.append(("interval_overlaps", 0, len(overlaps)))
        return reconcile(report, checks)

    def _reliability_section(self, geoms, ctrl, aging_acc, r_series, l_a, total) -> dict:
        aging = aging_acc.aging
        out = {
            "aging": float(aging), "aging_exact": str(aging), "R": r_series[-1],
            "L_a_cycles": l_a, "constants": {"g0": str(self.aging_g0), "a": self.aging_a,
                                             "b": self.aging_b, "beta": self.aging_beta},
            "pcm_line_accesses": aging_acc.n_accesses,
        }
        g = geoms.get(Unit.PCM)
        if g is not None:
            writes = ctrl.pcm_bank_writes()
            worst = max(writes) if writes else 0
            seconds = Fraction(total, g.clock_mhz * 10 ** 6)
            endurance = {"n_wl": g.wordlines_per_bank, "n_e": self.endurance_ne,
                         "max_bank_writes": worst, "total_writes": sum(writes),
                         "sim_seconds": float(seconds), "n_f_unit": "writes per second (worst PCM bank)"}
            if worst and seconds:
                n_f = worst / seconds
                life = endurance_lifetime(EnduranceInputs(g.wordlines_per_bank, n_f, self.endurance_ne))
                endurance.update(n_f=float(n_f), lifetime_seconds=float(life),
                                 lifetime_years=float(life / SECONDS_PER_YEAR))
            else:
                endurance.update(n_f=0.0, lifetime_seconds=None, lifetime_years=None)
            out["endurance"] = endurance
        return out


def simulate(trace: Trace, **params) -> SimReport:
    return TieredMemorySimulator(**params).fit(trace).report_

"""Closed-form endurance, NBTI aging, reliability, energy and area models.

Rational inputs stay rational: endurance lifetime and aging with integer
exponents are computed exactly with ``Fraction``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .geometry import DEFAULT_TABLES, CellOp, DeviceTables, Op, Segment, Unit


class InvalidInput(ValueError):
    pass


def _exact(x):
    return Fraction(x) if isinstance(x, (int, Rational)) else x


@dataclass(frozen=True)
class EnduranceInputs:
    n_wl: int
    n_f: object
    n_e: int = 10 ** 7


def endurance_lifetime(inputs: EnduranceInputs):
    """``N_WL * N_e / N_f``, in the time unit of ``N_f``."""
    if not inputs.n_f or inputs.n_f <= 0:
        raise InvalidInput("write frequency N_f must be positive")
    if inputs.n_wl <= 0 or inputs.n_e <= 0:
        raise InvalidInput("N_WL and N_e must be positive")
    return _exact(inputs.n_wl) * _exact(inputs.n_e) / _exact(inputs.n_f)


def _power(x, e):
    if isinstance(e, int) or (isinstance(e, Fraction) and e.denominator == 1):
        return _exact(x) ** int(e)
    return float(x) ** float(e)


class AgingAccumulator:
    """Running NBTI stress sum ``sum g0 * V^a * tRC^b`` over accesses.

    Accesses are tallied per ``(volts, tRC)`` pair so the sum stays exact and
    cheap no matter how many accesses are added.
    """

    def __init__(self, g0=1, a=2, b=1, beta=1, temperature: Optional[float] = None):
        if beta <= 0:
            raise InvalidInput("beta must be positive")
        self.g0, self.a, self.b, self.beta = g0, a, b, beta
        self.temperature = temperature
        self.counts: Counter = Counter()

    def add(self, volts, trc_ns, n: int = 1) -> "AgingAccumulator":
        if volts <= 0 or trc_ns <= 0:
            raise InvalidInput("bias voltage and tRC must be positive")
        if n < 0:
            raise InvalidInput("access count must be non-negative")
        if n:
            self.counts[(Fraction(volts), Fraction(trc_ns))] += n
        return self

    def extend(self, accesses: Iterable[Tuple[object, object]]) -> "AgingAccumulator":
        for v, t in accesses:
            self.add(v, t)
        return self

    @property
    def aging(self):
        total = Fraction(0)
        for (v, t), n in self.counts.items():
            total += n * _exact(self.g0) * _power(v, self.a) * _power(t, self.b)
        return total

    @property
    def n_accesses(self) -> int:
        return sum(self.counts.values())

    def reliability(self) -> float:
        return reliability(self.aging, self.beta)

    def copy(self) -> "AgingAccumulator":
        c = AgingAccumulator(self.g0, self.a, self.b, self.beta, self.temperature)
        c.counts = Counter(self.counts)
        return c


def accumulate_aging(acc: AgingAccumulator, access: Tuple[object, object]) -> AgingAccumulator:
    return acc.add(*access)


def reliability(aging, beta=1) -> float:
    if beta <= 0:
        raise InvalidInput("beta must be positive")
    if aging == 0:
        return 1.0
    return math.exp(-(float(aging) ** float(beta)))


def reliability_and_lifetime(samples: Sequence[Tuple[float, object]], beta=1) -> Tuple[List[float], float]:
    """Reliability per sample and its trapezoidal integral over time.

    ``samples`` is a list of ``(time, aging)`` points, e.g. one per phase.
    Returns ``(R series, L_a)``; ``L_a`` is a relative lifetime index.
    """
    rs = [reliability(a, beta) for _, a in samples]
    la = 0.0
    for (t0, _), (t1, _), r0, r1 in zip(samples, samples[1:], rs, rs[1:]):
        la += (float(t1) - float(t0)) * (r0 + r1) / 2
    return rs, la


def access_stress(unit: Unit, segment: Segment, op: Op,
                  tables: DeviceTables = DEFAULT_TABLES) -> Optional[Tuple[Fraction, Fraction]]:
    """``(bias volts, tRC ns)`` of one array access, or None for DRAM.

    Reads stress with the read bias, writes with the RESET bias.
    """
    if Unit(unit) is not Unit.PCM:
        return None
    cell_op = CellOp.RESET if Op(op) is Op.WRITE else CellOp.READ
    return (tables.lookup_bias(segment, cell_op), tables.lookup_timing(Unit.PCM, segment, op).tRC)


def area_overhead(isolation_h, peripheral_h, cells_per_bitline, extra_isolation: int = 1):
    if peripheral_h <= 0 or cells_per_bitline <= 0 or isolation_h < 0 or extra_isolation < 0:
        raise InvalidInput("heights must be positive")
    return extra_isolation * _exact(isolation_h) / (_exact(peripheral_h) + _exact(cells_per_bitline))


# picojoules per 64-byte array access and per channel burst; placeholder values
DEFAULT_ENERGY_PJ: Dict[Tuple[Unit, Segment, Op], float] = {
    (Unit.DRAM, Segment.NEAR, Op.READ): 800.0,
    (Unit.DRAM, Segment.NEAR, Op.WRITE): 800.0,
    (Unit.DRAM, Segment.FAR, Op.READ): 1000.0,
    (Unit.DRAM, Segment.FAR, Op.WRITE): 1000.0,
    (Unit.PCM, Segment.NEAR, Op.READ): 1200.0,
    (Unit.PCM, Segment.NEAR, Op.WRITE): 6000.0,
    (Unit.PCM, Segment.FAR, Op.READ): 1600.0,
    (Unit.PCM, Segment.FAR, Op.WRITE): 8000.0,
}
DEFAULT_BURST_PJ = 300.0
ENERGY_PROVENANCE = "user configuration placeholder"


@dataclass
class EnergyLedger:
    table: Dict[Tuple[Unit, Segment, Op], float] = field(default_factory=lambda: dict(DEFAULT_ENERGY_PJ))
    burst_pj: float = DEFAULT_BURST_PJ

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "EnergyLedger":
        data = dict(data or {})
        table = dict(DEFAULT_ENERGY_PJ)
        for row in data.get("access_pj", []):
            key = (Unit(str(row["unit"]).upper()), Segment(str(row["segment"]).lower()),
                   Op.WRITE if str(row["op"]).lower() in ("w", "write") else Op.READ)
            table[key] = float(row["pj"])
        return cls(table, float(data.get("burst_pj", DEFAULT_BURST_PJ)))

    def access_energy(self, counts: Mapping[Tuple[Unit, Segment, bool], int]) -> float:
        return sum(n * self.table[(u, s, Op.WRITE if w else Op.READ)] for (u, s, w), n in sorted(
            counts.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value, kv[0][2])))

    def to_dict(self) -> dict:
        return {
            "provenance": ENERGY_PROVENANCE,
            "burst_pj": self.burst_pj,
            "access_pj": [{"unit": u.value, "segment": s.value, "op": o.value, "pj": v}
                          for (u, s, o), v in self.table.items()],
        }


def energy_totals(ledger: EnergyLedger, demand_counts: Mapping, demand_bursts: int,
                  migration_counts: Mapping, migration_bursts: int) -> Tuple[float, float]:
    """Linear sum of counted events: ``(demand_pj, migration_pj)``.

    Count maps are keyed ``(unit, segment, is_write)``.
    """
    demand = ledger.access_energy(demand_counts) + demand_bursts * ledger.burst_pj
    migration = ledger.access_energy(migration_counts) + migration_bursts * ledger.burst_pj
    return demand, migration

"""Memory organization, physical address slicing and the timing/bias tables.

Addresses are sliced low to high as ``byte | channel | bank | column | row |
tile | group | rank`` so consecutive cache lines interleave across channels
and banks first.  For the default 128 GB PCM unit this gives exactly

    [36:35] rank  [34:32] partition  [31:25] tile  [24:13] row
    [12:11] column  [10:8] bank  [7:6] channel  [5:0] byte

All timing values are kept as exact ``Fraction`` nanoseconds; conversion to
memory-clock cycles happens in the controller.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from decimal import Decimal
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Optional, Tuple

PAGE_SIZE = 4096
LINE_SIZE = 64


class AddressOutOfRange(ValueError):
    pass


class NotApplicable(ValueError):
    pass


class Unit(str, enum.Enum):
    DRAM = "DRAM"
    PCM = "PCM"


class Segment(str, enum.Enum):
    NEAR = "near"
    FAR = "far"


class Op(str, enum.Enum):
    READ = "R"
    WRITE = "W"

    @classmethod
    def _missing_(cls, value):
        v = str(value).lower()
        if v in ("r", "read"):
            return cls.READ
        if v in ("w", "write"):
            return cls.WRITE
        return None


class CellOp(str, enum.Enum):
    SET = "set"
    RESET = "reset"
    READ = "read"


def _log2(n: int, name: str) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"{name}={n} is not a power of two")
    return n.bit_length() - 1


# name, low bit order
_FIELD_ORDER = ("byte_offset", "channel", "bank", "column", "row", "tile", "group", "rank")


@dataclass(frozen=True)
class MemoryGeometry:
    unit_kind: Unit
    capacity_bytes: int
    channels: int
    ranks_per_channel: int
    banks_per_rank: int
    groups_per_bank: int
    tiles_per_group: int
    rows_per_tile: int
    near_rows: int
    clock_mhz: int = 1066
    line_bytes: int = LINE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "unit_kind", Unit(self.unit_kind))
        for f in ("capacity_bytes", "channels", "ranks_per_channel", "banks_per_rank",
                  "groups_per_bank", "tiles_per_group", "rows_per_tile", "line_bytes"):
            _log2(getattr(self, f), f)
        if not 0 < self.near_rows < self.rows_per_tile:
            raise ValueError("near_rows must satisfy 0 < near_rows < rows_per_tile")
        per_column = (self.line_bytes * self.channels * self.ranks_per_channel
                      * self.banks_per_rank * self.groups_per_bank
                      * self.tiles_per_group * self.rows_per_tile)
        if self.capacity_bytes % per_column or self.capacity_bytes < per_column:
            raise ValueError("capacity does not divide into the given organization")
        _log2(self.capacity_bytes // per_column, "columns")

    @property
    def columns(self) -> int:
        return self.capacity_bytes // (
            self.line_bytes * self.channels * self.ranks_per_channel * self.banks_per_rank
            * self.groups_per_bank * self.tiles_per_group * self.rows_per_tile)

    @property
    def far_rows(self) -> int:
        return self.rows_per_tile - self.near_rows

    def counts(self) -> Dict[str, int]:
        return {
            "byte_offset": self.line_bytes,
            "channel": self.channels,
            "bank": self.banks_per_rank,
            "column": self.columns,
            "row": self.rows_per_tile,
            "tile": self.tiles_per_group,
            "group": self.groups_per_bank,
            "rank": self.ranks_per_channel,
        }

    @property
    def bit_fields(self) -> Dict[str, Tuple[int, int]]:
        """Map field name to ``(low_bit, width)``."""
        out, lo = {}, 0
        counts = self.counts()
        for name in _FIELD_ORDER:
            width = _log2(counts[name], name)
            out[name] = (lo, width)
            lo += width
        return out

    @property
    def wordlines_per_bank(self) -> int:
        return self.groups_per_bank * self.tiles_per_group * self.rows_per_tile

    @property
    def n_banks(self) -> int:
        return self.channels * self.ranks_per_channel * self.banks_per_rank

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["unit_kind"] = self.unit_kind.value
        return d

    def with_overrides(self, **kw) -> "MemoryGeometry":
        return replace(self, **kw)


PCM_DEFAULT = MemoryGeometry(
    unit_kind=Unit.PCM, capacity_bytes=128 << 30, channels=4, ranks_per_channel=4,
    banks_per_rank=8, groups_per_bank=8, tiles_per_group=128, rows_per_tile=4096,
    near_rows=512,
)
DRAM_DEFAULT = MemoryGeometry(
    unit_kind=Unit.DRAM, capacity_bytes=64 << 30, channels=2, ranks_per_channel=4,
    banks_per_rank=8, groups_per_bank=128, tiles_per_group=1, rows_per_tile=512,
    near_rows=128,
)


@dataclass(frozen=True)
class PhysicalLocation:
    unit_kind: Unit
    channel: int
    rank: int
    bank: int
    group: int
    tile: int
    row: int
    column: int
    byte_offset: int
    segment: Segment

    @property
    def bank_key(self) -> Tuple[Unit, int, int, int]:
        return (self.unit_kind, self.channel, self.rank, self.bank)

    @property
    def row_id(self) -> Tuple[int, int, int]:
        """Identifies the open wordline within a bank."""
        return (self.group, self.tile, self.row)


def segment_of_row(row: int, geometry: MemoryGeometry) -> Segment:
    return Segment.NEAR if row < geometry.near_rows else Segment.FAR


def decode(physical_address: int, geometry: MemoryGeometry) -> PhysicalLocation:
    if not 0 <= physical_address < geometry.capacity_bytes:
        raise AddressOutOfRange(
            f"address {physical_address:#x} outside [0, {geometry.capacity_bytes:#x})")
    vals = {}
    for name, (lo, width) in geometry.bit_fields.items():
        vals[name] = (physical_address >> lo) & ((1 << width) - 1)
    return PhysicalLocation(
        unit_kind=geometry.unit_kind, segment=segment_of_row(vals["row"], geometry), **vals)


def encode(location: PhysicalLocation, geometry: MemoryGeometry) -> int:
    """Inverse of :func:`decode`; ``segment`` is ignored since it is derived."""
    counts = geometry.counts()
    addr = 0
    for name, (lo, _width) in geometry.bit_fields.items():
        v = getattr(location, name)
        if not 0 <= v < counts[name]:
            raise AddressOutOfRange(f"{name}={v} out of range for {geometry.unit_kind.value}")
        addr |= v << lo
    return addr


@dataclass(frozen=True)
class TimingEntry:
    tRCD: Fraction
    tCL: Fraction
    tBL: Fraction
    tRP: Fraction
    tRC: Fraction

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, Fraction(str(getattr(self, f.name))))
        if self.tRC != self.tRCD + self.tCL + self.tBL + self.tRP:
            raise ValueError(f"tRC {self.tRC} != tRCD+tCL+tBL+tRP for {self}")

    def cycles(self, clock_mhz: int) -> "TimingCycles":
        return TimingCycles(*(ns_to_cycles(getattr(self, f.name), clock_mhz) for f in fields(self)))


@dataclass(frozen=True)
class TimingCycles:
    tRCD: int
    tCL: int
    tBL: int
    tRP: int
    tRC: int


def ns_to_cycles(ns, clock_mhz: int) -> int:
    return math.ceil(Fraction(ns) * clock_mhz / 1000)


@dataclass(frozen=True)
class BiasEntry:
    set_v: Fraction
    reset_v: Fraction
    read_v: Fraction

    def __post_init__(self):
        for f in fields(self):
            v = Fraction(str(getattr(self, f.name)))
            if v <= 0:
                raise ValueError("bias voltages must be positive")
            object.__setattr__(self, f.name, v)

    def volts(self, op: CellOp) -> Fraction:
        op = CellOp(op)
        return {CellOp.SET: self.set_v, CellOp.RESET: self.reset_v, CellOp.READ: self.read_v}[op]


def _t(*vals) -> TimingEntry:
    return TimingEntry(*(Fraction(v) for v in vals))


DEFAULT_TIMINGS: Dict[Tuple[Unit, Segment, Op], TimingEntry] = {
    (Unit.DRAM, Segment.NEAR, Op.READ): _t("9.3", "5.5", "7.5", "5.5", "27.8"),
    (Unit.DRAM, Segment.NEAR, Op.WRITE): _t("9.3", "5.5", "7.5", "5.5", "27.8"),
    (Unit.DRAM, Segment.FAR, Op.READ): _t("15", "15", "7.5", "15", "52.5"),
    (Unit.DRAM, Segment.FAR, Op.WRITE): _t("15", "15", "7.5", "15", "52.5"),
    (Unit.PCM, Segment.NEAR, Op.READ): _t("3.75", "22.5", "15", "0", "41.25"),
    (Unit.PCM, Segment.NEAR, Op.WRITE): _t("3.75", "101", "15", "0", "119.75"),
    (Unit.PCM, Segment.FAR, Op.READ): _t("3.75", "37.5", "15", "0", "56.25"),
    (Unit.PCM, Segment.FAR, Op.WRITE): _t("3.75", "142.8", "15", "0", "161.55"),
}

# bias voltage by bitline position: nearest (1st cell), farthest (4096th), intermediate (512th)
DEFAULT_BIAS_COLUMNS: Dict[str, BiasEntry] = {
    "nearest": BiasEntry(Fraction("2.1"), Fraction("6.8"), Fraction("0.96")),
    "farthest": BiasEntry(Fraction("3.7"), Fraction("7.1"), Fraction("2.85")),
    "intermediate": BiasEntry(Fraction("2.3"), Fraction("6.9"), Fraction("1.2")),
}
# the near segment ends at the 512th cell, the far segment at the 4096th
SEGMENT_BIAS_COLUMN = {Segment.NEAR: "intermediate", Segment.FAR: "farthest"}


@dataclass(frozen=True)
class DeviceTables:
    """Timing LUT plus PCM bias voltages.  Immutable once built."""

    timings: Mapping[Tuple[Unit, Segment, Op], TimingEntry] = field(
        default_factory=lambda: dict(DEFAULT_TIMINGS))
    bias_columns: Mapping[str, BiasEntry] = field(
        default_factory=lambda: dict(DEFAULT_BIAS_COLUMNS))

    def __post_init__(self):
        for key in DEFAULT_TIMINGS:
            if key not in self.timings:
                raise ValueError(f"timing table missing row {key}")
        for seg, col in SEGMENT_BIAS_COLUMN.items():
            if col not in self.bias_columns:
                raise ValueError(f"bias table missing column {col!r}")
        near, far = self.bias_columns["intermediate"], self.bias_columns["farthest"]
        for op in CellOp:
            if near.volts(op) > far.volts(op):
                raise ValueError(f"near-segment {op.value} voltage exceeds far-segment voltage")

    def lookup_timing(self, unit_kind, segment, op) -> TimingEntry:
        return self.timings[(Unit(unit_kind), Segment(segment), Op(op))]

    def lookup_bias(self, segment, op, unit_kind=Unit.PCM) -> Fraction:
        if Unit(unit_kind) is not Unit.PCM:
            raise NotApplicable("bias voltages are modeled for PCM only")
        return self.bias_columns[SEGMENT_BIAS_COLUMN[Segment(segment)]].volts(op)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "DeviceTables":
        """Build from a config mapping; missing sections fall back to defaults.

        ``timing`` is a list of ``{unit, segment, op, tRCD, tCL, tBL, tRP, tRC}``;
        ``bias`` maps column name to ``{set, reset, read}``.
        """
        data = data or {}
        timings = dict(DEFAULT_TIMINGS)
        for row in data.get("timing", []):
            key = (Unit(row["unit"].upper()), Segment(row["segment"].lower()), _parse_op(row["op"]))
            timings[key] = TimingEntry(*(Fraction(str(row[n])) for n in ("tRCD", "tCL", "tBL", "tRP", "tRC")))
        bias = dict(DEFAULT_BIAS_COLUMNS)
        for name, row in (data.get("bias") or {}).items():
            bias[name] = BiasEntry(Fraction(str(row["set"])), Fraction(str(row["reset"])), Fraction(str(row["read"])))
        return cls(timings, bias)

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit", "segment", "op", "tRCD", "tCL", "tBL", "tRP", "tRC"])
        for (unit, seg, op) in DEFAULT_TIMINGS:
            t = self.timings[(unit, seg, op)]
            w.writerow([unit.value, seg.value, "read" if op is Op.READ else "write",
                        *(_fmt(getattr(t, n)) for n in ("tRCD", "tCL", "tBL", "tRP", "tRC"))])
        return buf.getvalue()

    def bias_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.bias_columns)
        w.writerow(["op", *names])
        for op in CellOp:
            w.writerow([op.value, *(_fmt(self.bias_columns[n].volts(op)) for n in names)])
        return buf.getvalue()


def _parse_op(s: str) -> Op:
    s = str(s).lower()
    if s in ("r", "read"):
        return Op.READ
    if s in ("w", "write"):
        return Op.WRITE
    raise ValueError(f"unknown op {s!r}")


def _fmt(x: Fraction) -> str:
    x = Fraction(x)
    return format((Decimal(x.numerator) / Decimal(x.denominator)).normalize(), "f")


DEFAULT_TABLES = DeviceTables()


def lookup_timing(unit_kind, segment, op, tables: DeviceTables = DEFAULT_TABLES) -> TimingEntry:
    return tables.lookup_timing(unit_kind, segment, op)


def lookup_bias(segment, op, unit_kind=Unit.PCM, tables: DeviceTables = DEFAULT_TABLES) -> Fraction:
    return tables.lookup_bias(segment, op, unit_kind)


def geometry_from_dict(data: dict, base: Optional[MemoryGeometry] = None) -> MemoryGeometry:
    if base is None:
        kind = Unit(str(data["unit_kind"]).upper())
        base = PCM_DEFAULT if kind is Unit.PCM else DRAM_DEFAULT
    kw = {k: v for k, v in data.items() if k != "unit_kind"}
    unknown = set(kw) - {f.name for f in fields(MemoryGeometry)}
    if unknown:
        raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
    return replace(base, **kw)


def page_layout(geometry: MemoryGeometry, page_size: int = PAGE_SIZE) -> Tuple[int, int]:
    """Return ``(column_bits_inside_page, frames_per_row)`` for a geometry.

    A page must sit inside one row of every bank of its rank, so its offset bits
    have to cover byte, channel and bank fields and stop below the row field.
    """
    bf = geometry.bit_fields
    page_bits = _log2(page_size, "page_size")
    col_lo, col_w = bf["column"]
    inside = page_bits - col_lo
    if inside < 0:
        raise ValueError("page is smaller than one line per bank of a rank")
    if inside > col_w:
        raise ValueError("page would straddle rows; increase columns or shrink the page")
    return inside, 1 << (col_w - inside)


def iter_table_rows() -> Iterable[Tuple[Unit, Segment, Op]]:
    return iter(DEFAULT_TIMINGS)

"""OS-level page management: frame pools, first-touch allocation, phase-boundary migration.

Four policies are available:

``baseline``
    uniformly random free frame over every unit, no migration.
``nimble``
    random initial placement; at each phase boundary hot PCM pages move to
    DRAM and previously promoted DRAM pages that went cold move back.
``tldram``
    DRAM only, near segment first, no migration.
``mneme``
    first-touch-instruction prediction picks the tier at fault time; hot far
    pages are promoted and cold near pages demoted at phase boundaries.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .geometry import (PAGE_SIZE, MemoryGeometry, Op, PhysicalLocation, Segment, Unit,
                       decode, page_layout)
from .predictor import BOTH, READ_INTENSIVE, WRITE_INTENSIVE, FTIPredictor

POLICIES = ("baseline", "nimble", "tldram", "mneme")
# demotion journey of a page through the tiers
TIER_ORDER = ((Unit.DRAM, Segment.NEAR), (Unit.DRAM, Segment.FAR),
              (Unit.PCM, Segment.NEAR), (Unit.PCM, Segment.FAR))


class OutOfMemory(RuntimeError):
    pass


class FramePool:
    """Free frames ``0..size-1`` of one slice, with O(1) random pop.

    Uses a sparse Fisher-Yates permutation so huge pools cost memory only for
    frames that have actually been handed out.
    """

    __slots__ = ("size", "n_free", "_perm")

    def __init__(self, size: int):
        self.size = size
        self.n_free = size
        self._perm: Dict[int, int] = {}

    def _take(self, j: int) -> int:
        perm = self._perm
        last = self.n_free - 1
        val = perm.get(j, j)
        if j != last:
            perm[j] = perm.pop(last, last)
        else:
            perm.pop(j, None)
        self.n_free = last
        return val

    def pop(self, rng: random.Random) -> int:
        if not self.n_free:
            raise OutOfMemory("pool empty")
        return self._take(rng.randrange(self.n_free))

    def push(self, idx: int) -> None:
        if self.n_free >= self.size:
            raise ValueError("pool overflow")
        self._perm[self.n_free] = idx
        self.n_free += 1

    @property
    def n_allocated(self) -> int:
        return self.size - self.n_free


class UnitFrames:
    """Page frames of one memory unit, split by (segment, rank).

    A 4 KB page covers one row in every bank of its rank, so a frame is
    identified by ``(rank, group, tile, row, column_high_bits)``.
    """

    def __init__(self, geometry: MemoryGeometry, page_size: int = PAGE_SIZE):
        g = self.geometry = geometry
        inside, fpr = page_layout(geometry, page_size)
        self.frames_per_row = fpr
        bf = geometry.bit_fields
        self._col_shift = bf["column"][0] + inside
        self._row_lo = bf["row"][0]
        self._tile_lo = bf["tile"][0]
        self._group_lo = bf["group"][0]
        self._rank_lo = bf["rank"][0]
        self.seg_rows = {Segment.NEAR: g.near_rows, Segment.FAR: g.far_rows}
        self.pools: Dict[Tuple[Segment, int], FramePool] = {}
        for seg in Segment:
            n = g.groups_per_bank * g.tiles_per_group * self.seg_rows[seg] * fpr
            for rank in range(g.ranks_per_channel):
                self.pools[(seg, rank)] = FramePool(n)

    def frame_addr(self, seg: Segment, rank: int, idx: int) -> int:
        g = self.geometry
        idx, colhi = divmod(idx, self.frames_per_row)
        idx, row = divmod(idx, self.seg_rows[seg])
        group, tile = divmod(idx, g.tiles_per_group)
        if seg is Segment.FAR:
            row += g.near_rows
        return ((rank << self._rank_lo) | (group << self._group_lo) | (tile << self._tile_lo)
                | (row << self._row_lo) | (colhi << self._col_shift))

    def frame_index(self, addr: int) -> Tuple[Segment, int, int]:
        g = self.geometry
        rank = (addr >> self._rank_lo) % g.ranks_per_channel
        group = (addr >> self._group_lo) % g.groups_per_bank
        tile = (addr >> self._tile_lo) % g.tiles_per_group
        row = (addr >> self._row_lo) % g.rows_per_tile
        colhi = (addr >> self._col_shift) % self.frames_per_row
        seg = Segment.NEAR if row < g.near_rows else Segment.FAR
        if seg is Segment.FAR:
            row -= g.near_rows
        idx = ((group * g.tiles_per_group + tile) * self.seg_rows[seg] + row) * self.frames_per_row + colhi
        return seg, rank, idx

    def n_free(self, seg: Optional[Segment] = None) -> int:
        return sum(p.n_free for (s, _), p in self.pools.items() if seg is None or s is seg)

    def pop(self, rng: random.Random, segs: Sequence[Segment], rank: Optional[int] = None) -> int:
        """Random free frame over the given segments (weighted by free count)."""
        cands = [(k, p) for k, p in self.pools.items()
                 if k[0] in segs and (rank is None or k[1] == rank) and p.n_free]
        total = sum(p.n_free for _, p in cands)
        if not total:
            raise OutOfMemory(f"{self.geometry.unit_kind.value} {[s.value for s in segs]} full")
        r = rng.randrange(total)
        for (seg, rk), p in cands:
            if r < p.n_free:
                return self.frame_addr(seg, rk, p.pop(rng))
            r -= p.n_free
        raise AssertionError("unreachable")

    def push(self, addr: int) -> None:
        seg, rank, idx = self.frame_index(addr)
        self.pools[(seg, rank)].push(idx)


@dataclass
class PageTableEntry:
    vpn: int
    unit: Unit
    frame: int
    segment: Segment
    rank: int
    fti_pc: int
    fti_known: bool
    first_phase: int
    alloc_seq: int
    reads_this_phase: int = 0
    writes_this_phase: int = 0
    migration_count: int = 0

    @property
    def accesses_this_phase(self) -> int:
        return self.reads_this_phase + self.writes_this_phase

    @property
    def write_heavy(self) -> bool:
        return self.writes_this_phase >= self.reads_this_phase

    @property
    def tier(self) -> Tuple[Unit, Segment]:
        return (self.unit, self.segment)


@dataclass(frozen=True)
class Fault:
    vpn: int
    pc: int
    unit: Unit
    segment: Segment
    fti_class: int


@dataclass(frozen=True)
class Move:
    vpn: int
    src_unit: Unit
    src_frame: int
    src_segment: Segment
    dst_unit: Unit
    dst_frame: int
    dst_segment: Segment
    intra_bank: bool
    reason: str


@dataclass(frozen=True)
class Demand:
    vpn: int
    unit: Unit
    paddr: int
    op: Op
    segment: Segment


@dataclass
class PhaseStats:
    phase: int
    faults: int = 0
    fti_hits: int = 0

    @property
    def hit_rate(self) -> float:
        return self.fti_hits / self.faults if self.faults else 0.0


class PhaseClock:
    """Maps instruction indices to fixed-length execution phases."""

    def __init__(self, phase_length_instructions: int = 100_000_000):
        if phase_length_instructions <= 0:
            raise ValueError("phase length must be positive")
        self.phase_length_instructions = int(phase_length_instructions)
        self.current_phase = 0

    def phase_of(self, instr_index: int) -> int:
        return instr_index // self.phase_length_instructions

    def crossings(self, instr_index: int) -> int:
        """Number of boundaries passed since the last call; advances the clock."""
        p = instr_index // self.phase_length_instructions
        n = p - self.current_phase
        if n > 0:
            self.current_phase = p
            return n
        return 0


class PageManager:
    """Deterministic page-management state machine driven by the trace cursor."""

    def __init__(self, policy: str, geometries: Dict[Unit, MemoryGeometry],
                 predictor: Optional[FTIPredictor] = None, hot_threshold: int = 32,
                 cold_threshold: int = 0, seed: int = 0,
                 decision_log: Optional[Callable[[dict], None]] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
        if not geometries:
            raise ValueError("at least one memory unit is required")
        if policy in ("nimble", "mneme") and set(geometries) != {Unit.DRAM, Unit.PCM}:
            raise ValueError(f"policy {policy!r} needs both DRAM and PCM units")
        if policy == "tldram" and Unit.DRAM not in geometries:
            raise ValueError("policy 'tldram' needs a DRAM unit")
        self.policy = policy
        self.units = {u: UnitFrames(g) for u, g in geometries.items()}
        self.geometries = dict(geometries)
        self.predictor = predictor if predictor is not None else (
            FTIPredictor(seed=seed) if policy == "mneme" else None)
        self.hot_threshold = hot_threshold
        self.cold_threshold = cold_threshold
        self.rng = random.Random(seed)
        self.log = decision_log
        self.page_table: Dict[int, PageTableEntry] = {}
        self.residents: Dict[Tuple[Unit, Segment], Dict[int, PageTableEntry]] = {
            (u, s): {} for u in self.units for s in Segment}
        self.phase = 0
        self.phase_stats: List[PhaseStats] = [PhaseStats(0)]
        self._touched: Dict[int, PageTableEntry] = {}
        self._unknown_this_phase: List[PageTableEntry] = []
        self._seq = 0
        self.faults = 0
        self.moves: List[Move] = []

    # ------------------------------------------------------------------ frames

    def _tiers(self) -> List[Tuple[Unit, Segment]]:
        return [t for t in TIER_ORDER if t[0] in self.units]

    def free_frames(self, unit: Unit, segment: Optional[Segment] = None) -> int:
        return self.units[unit].n_free(segment)

    def _take(self, unit: Unit, segs: Sequence[Segment], rank: Optional[int] = None) -> int:
        return self.units[unit].pop(self.rng, segs, rank)

    def _place(self, pte: PageTableEntry, unit: Unit, frame: int) -> None:
        seg, rank, _ = self.units[unit].frame_index(frame)
        pte.unit, pte.frame, pte.segment, pte.rank = unit, frame, seg, rank
        self.residents[(unit, seg)][pte.vpn] = pte

    def _relocate(self, pte: PageTableEntry, unit: Unit, segs: Sequence[Segment],
                  reason: str) -> Move:
        """Move ``pte`` to a free frame of ``unit``/``segs``; prefers its own rank."""
        src_unit, src_frame = pte.unit, pte.frame
        frames = self.units[unit]
        rank = None
        if unit is src_unit and any(frames.pools[(s, pte.rank)].n_free for s in segs):
            rank = pte.rank
        dst = self._take(unit, segs, rank)
        del self.residents[pte.tier][pte.vpn]
        self.units[src_unit].push(src_frame)
        old_rank, old_seg = pte.rank, pte.segment
        self._place(pte, unit, dst)
        pte.migration_count += 1
        mv = Move(pte.vpn, src_unit, src_frame, old_seg, unit, dst, pte.segment,
                  intra_bank=(unit is src_unit and pte.rank == old_rank), reason=reason)
        self.moves.append(mv)
        return mv

    def evict_for_space(self, unit: Unit, segment: Segment) -> List[Move]:
        """Demote the coldest page of a tier one step down the tier order.

        Returns the moves in execution order; the last one is the victim's.
        Cascades when the next tier is full as well.
        """
        tiers = self._tiers()
        i = tiers.index((unit, segment))
        residents = self.residents[(unit, segment)]
        if not residents:
            raise OutOfMemory(f"no resident page to evict from {unit.value} {segment.value}")
        if i + 1 >= len(tiers):
            raise OutOfMemory("last tier is full")
        victim = min(residents.values(), key=lambda p: (p.accesses_this_phase, p.alloc_seq))
        nu, ns = tiers[i + 1]
        moves: List[Move] = []
        if self.units[nu].n_free(ns) == 0:
            moves.extend(self.evict_for_space(nu, ns))
        moves.append(self._relocate(victim, nu, (ns,), "evict"))
        return moves

    # -------------------------------------------------------------- allocation

    def allocate_on_fault(self, pc: int, vpn: int) -> Tuple[PageTableEntry, Fault, List[Move]]:
        if vpn in self.page_table:
            raise ValueError(f"vpn {vpn:#x} already mapped")
        fti_class = self.predictor.lookup(pc) if self.predictor is not None else 0
        moves: List[Move] = []
        unit, frame = getattr(self, f"_alloc_{self.policy}")(fti_class, moves)
        seg, rank, _ = self.units[unit].frame_index(frame)
        pte = PageTableEntry(vpn=vpn, unit=unit, frame=frame, segment=seg, rank=rank, fti_pc=pc,
                             fti_known=fti_class != 0, first_phase=self.phase, alloc_seq=self._seq)
        self._seq += 1
        self.page_table[vpn] = pte
        self.residents[(unit, seg)][vpn] = pte
        self.faults += 1
        st = self.phase_stats[-1]
        st.faults += 1
        st.fti_hits += fti_class != 0
        if self.policy == "mneme" and not pte.fti_known:
            self._unknown_this_phase.append(pte)
        return pte, Fault(vpn, pc, unit, seg, fti_class), moves

    def _first_free(self, chain: Iterable[Tuple[Unit, Segment]]) -> Tuple[Unit, int]:
        for unit, seg in chain:
            if unit in self.units and self.units[unit].n_free(seg):
                return unit, self._take(unit, (seg,))
        raise OutOfMemory("all frame pools are exhausted")

    def _alloc_baseline(self, fti_class, moves):
        weights = [(u, f.n_free()) for u, f in self.units.items()]
        total = sum(w for _, w in weights)
        if not total:
            raise OutOfMemory("all frame pools are exhausted")
        r = self.rng.randrange(total)
        for u, w in weights:
            if r < w:
                return u, self._take(u, tuple(Segment))
            r -= w
        raise AssertionError("unreachable")

    _alloc_nimble = _alloc_baseline

    def _alloc_tldram(self, fti_class, moves):
        chain = [(Unit.DRAM, Segment.NEAR), (Unit.DRAM, Segment.FAR),
                 (Unit.PCM, Segment.NEAR), (Unit.PCM, Segment.FAR)]
        return self._first_free(chain)

    _SPILL = {
        (Unit.DRAM, Segment.NEAR): ((Unit.DRAM, Segment.FAR), (Unit.PCM, Segment.NEAR), (Unit.PCM, Segment.FAR)),
        (Unit.PCM, Segment.NEAR): ((Unit.PCM, Segment.FAR), (Unit.DRAM, Segment.FAR), (Unit.DRAM, Segment.NEAR)),
        None: ((Unit.PCM, Segment.FAR), (Unit.DRAM, Segment.FAR), (Unit.PCM, Segment.NEAR), (Unit.DRAM, Segment.NEAR)),
    }

    def _alloc_mneme(self, fti_class, moves):
        if fti_class & WRITE_INTENSIVE:  # write-only hit, or both (conservative)
            target = (Unit.DRAM, Segment.NEAR)
        elif fti_class == READ_INTENSIVE:
            target = (Unit.PCM, Segment.NEAR)
        else:
            return self._first_free(self._SPILL[None])
        unit, seg = target
        if not self.units[unit].n_free(seg):
            try:
                moves.extend(self.evict_for_space(unit, seg))
            except OutOfMemory:
                return self._first_free(self._SPILL[target])
        return unit, self._take(unit, (seg,))

    # ------------------------------------------------------------------ access

    def on_access(self, req) -> list:
        """Fault in the page if needed, count the access and emit controller events.

        Returns ``[Fault, Move..., Demand]`` on a fault, ``[Demand]`` otherwise.
        """
        vpn = req.vaddr // PAGE_SIZE
        events: list = []
        pte = self.page_table.get(vpn)
        if pte is None:
            pte, fault, moves = self.allocate_on_fault(req.pc, vpn)
            events.append(fault)
            events.extend(moves)
        is_write = Op(req.op) is Op.WRITE
        self.count_access(pte, is_write)
        events.append(Demand(vpn, pte.unit, pte.frame | (req.vaddr % PAGE_SIZE),
                             Op.WRITE if is_write else Op.READ, pte.segment))
        return events

    def count_access(self, pte: PageTableEntry, is_write: bool) -> None:
        if is_write:
            pte.writes_this_phase += 1
        else:
            pte.reads_this_phase += 1
        self._touched[pte.vpn] = pte
        if not pte.fti_known and pte.first_phase == self.phase and self.predictor is not None:
            self.predictor.air_record(pte.fti_pc, pte.vpn, Op.WRITE if is_write else Op.READ)

    # ------------------------------------------------------------- boundaries

    def on_phase_boundary(self) -> List[Move]:
        """Commit the predictor, build and apply this policy's migration plan."""
        self.moves = []
        promoted = []
        if self.predictor is not None:
            for pte in self._unknown_this_phase:
                self.predictor.air_classify(pte.fti_pc, pte.write_heavy)
            promoted = self.predictor.phase_commit()
        plan = getattr(self, f"_plan_{self.policy}")()
        if self.log is not None:
            self.log({
                "phase": self.phase, "policy": self.policy,
                "promoted_ftis": [hex(e.pc) for e in promoted],
                "moves": [{"vpn": m.vpn, "from": f"{m.src_unit.value}-{m.src_segment.value}",
                           "to": f"{m.dst_unit.value}-{m.dst_segment.value}",
                           "intra_bank": m.intra_bank, "reason": m.reason} for m in plan],
            })
        for pte in self._touched.values():
            pte.reads_this_phase = pte.writes_this_phase = 0
        self._touched = {}
        self._unknown_this_phase = []
        self.phase += 1
        self.phase_stats.append(PhaseStats(self.phase))
        return plan

    def _plan_baseline(self) -> List[Move]:
        return []

    _plan_tldram = _plan_baseline

    def _plan_mneme(self) -> List[Move]:
        cold = self.cold_threshold
        for unit in (Unit.DRAM, Unit.PCM):
            near = self.residents[(unit, Segment.NEAR)]
            for vpn in sorted(near):
                pte = near[vpn]
                if pte.accesses_this_phase <= cold and self.units[unit].n_free(Segment.FAR):
                    self._relocate(pte, unit, (Segment.FAR,), "demote")
        hot = [p for u in (Unit.DRAM, Unit.PCM) for p in self.residents[(u, Segment.FAR)].values()
               if p.accesses_this_phase >= self.hot_threshold]
        hot.sort(key=lambda p: (-p.accesses_this_phase, p.vpn))
        for pte in hot:
            unit = Unit.DRAM if pte.write_heavy else Unit.PCM
            if not self._make_room(unit, Segment.NEAR, pte):
                continue
            self._relocate(pte, unit, (Segment.NEAR,), "promote")
        return self.moves

    def _make_room(self, unit: Unit, seg: Segment, incoming: PageTableEntry) -> bool:
        if self.units[unit].n_free(seg):
            return True
        residents = self.residents[(unit, seg)]
        if not residents:
            return False
        victim = min(residents.values(), key=lambda p: (p.accesses_this_phase, p.alloc_seq))
        if victim.accesses_this_phase >= incoming.accesses_this_phase:
            return False
        try:
            self.evict_for_space(unit, seg)
        except OutOfMemory:
            return False
        return True

    def _plan_nimble(self) -> List[Move]:
        both = tuple(Segment)
        dram = [p for s in Segment for p in self.residents[(Unit.DRAM, s)].values()]
        for pte in sorted(dram, key=lambda p: p.vpn):
            if (pte.migration_count > 0 and pte.accesses_this_phase <= self.cold_threshold
                    and self.units[Unit.PCM].n_free()):
                self._relocate(pte, Unit.PCM, both, "demote")
        hot = [p for s in Segment for p in self.residents[(Unit.PCM, s)].values()
               if p.accesses_this_phase >= self.hot_threshold]
        hot.sort(key=lambda p: (-p.accesses_this_phase, p.vpn))
        for pte in hot:
            if not self.units[Unit.DRAM].n_free():
                victims = [p for s in Segment for p in self.residents[(Unit.DRAM, s)].values()]
                victim = min(victims, key=lambda p: (p.accesses_this_phase, p.alloc_seq))
                if victim.accesses_this_phase >= pte.accesses_this_phase or not self.units[Unit.PCM].n_free():
                    continue
                self._relocate(victim, Unit.PCM, both, "evict")
            self._relocate(pte, Unit.DRAM, both, "promote")
        return self.moves

    # -------------------------------------------------------------- auditing

    def check_invariants(self) -> None:
        for unit, frames in self.units.items():
            for (seg, rank), pool in frames.pools.items():
                resident = sum(1 for p in self.residents[(unit, seg)].values() if p.rank == rank)
                if pool.n_allocated != resident:
                    raise AssertionError(
                        f"frame conservation broken for {unit.value}/{seg.value}/rank{rank}: "
                        f"{pool.n_allocated} allocated vs {resident} resident")
        seen = set()
        for pte in self.page_table.values():
            key = (pte.unit, pte.frame)
            if key in seen:
                raise AssertionError(f"frame {key} mapped twice")
            seen.add(key)

    def migration_histogram(self) -> Dict[str, int]:
        h = {"0": 0, "1": 0, ">1": 0}
        for p in self.page_table.values():
            h["0" if p.migration_count == 0 else "1" if p.migration_count == 1 else ">1"] += 1
        return h

    def location_of(self, vpn: int) -> PhysicalLocation:
        pte = self.page_table[vpn]
        return decode(pte.frame, self.geometries[pte.unit])

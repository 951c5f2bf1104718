"""Per-channel memory controller with FR-FCFS scheduling and migration execution.

Time is counted in integer memory-clock cycles.  Each bank and channel
reservation is an interval ``[start, end)`` and a bank is never reserved
twice over the same cycles, which :func:`audit_intervals` checks on the
optional event log.

The controller state lives in a handful of numpy arrays so that the event
loop can run as compiled code (numba); :class:`MemoryController` is the
Python face of that state.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
from numba import njit

from .geometry import (DEFAULT_TABLES, LINE_SIZE, PAGE_SIZE, DeviceTables, MemoryGeometry, Op,
                       Segment, Unit)
from .policy import Move

BIG = 1 << 62
UNIT_CODE = {Unit.DRAM: 0, Unit.PCM: 1}
SEG_CODE = {Segment.NEAR: 0, Segment.FAR: 1}
CODE_SEG = (Segment.NEAR, Segment.FAR)

# timing columns
T_RCD, T_CL, T_BL, T_RP, T_RC = range(5)
# bank columns
B_BUSY, B_OPEN, B_OSEG, B_READS, B_WRITES, B_NEAR, B_FAR = range(7)
# channel columns
C_BUSY, C_BUSYCYC, C_DEMAND, C_MIG, C_UNIT, C_DEC, C_DEMCYC, C_MIGCYC = range(8)
# queue entry columns (queue axis 1: 0 = reads, 1 = writes)
Q_SEQ, Q_ARR, Q_BANK, Q_ROW, Q_ESEG, Q_PSEG = range(6)
# scalar slots
(S_NOW, S_OUT, S_LAST, S_SEQ, S_HITS, S_MISSES, S_LAT, S_NISS, S_PREV_ARR, S_PREV_INSTR,
 S_HAVE_PREV) = range(11)
# config slots
(K_QCAP, K_WHIGH, K_STARVE, K_RECORD, K_MAXOUT, K_GAP_NUM, K_GAP_DEN) = range(7)
# counter kinds
N_DEMAND, N_EFFECTIVE, N_MIGRATION = range(3)
# result columns
R_START, R_BURST, R_END, R_HIT, R_CONFLICT, R_WRITE = range(6)


class QueueFull(RuntimeError):
    pass


# --------------------------------------------------------------------- kernels

@njit(cache=True)
def _decision(c, bank, q, qn):
    t = BIG
    for rw in range(2):
        for j in range(qn[c, rw]):
            b = bank[q[c, rw, j, Q_BANK], B_BUSY]
            a = q[c, rw, j, Q_ARR]
            v = a if a > b else b
            if v < t:
                t = v
    return t


@njit(cache=True)
def _select(c, t, bank, q, qn, cfg):
    """FR-FCFS pick at cycle ``t``: returns ``(rw, slot)`` or ``(-1, -1)``."""
    first_r = first_w = hit_r = hit_w = -1
    for j in range(qn[c, 0]):
        b = q[c, 0, j, Q_BANK]
        if q[c, 0, j, Q_ARR] <= t and bank[b, B_BUSY] <= t:
            if first_r < 0:
                first_r = j
            if bank[b, B_OPEN] == q[c, 0, j, Q_ROW]:
                hit_r = j
                break
    for j in range(qn[c, 1]):
        b = q[c, 1, j, Q_BANK]
        if q[c, 1, j, Q_ARR] <= t and bank[b, B_BUSY] <= t:
            if first_w < 0:
                first_w = j
            if bank[b, B_OPEN] == q[c, 1, j, Q_ROW]:
                hit_w = j
                break
    if first_w >= 0 and (first_r < 0 or qn[c, 1] > cfg[K_WHIGH]
                         or t - q[c, 1, 0, Q_ARR] >= cfg[K_STARVE]):
        return 1, (hit_w if hit_w >= 0 else first_w)
    if first_r < 0:
        return -1, -1
    return 0, (hit_r if hit_r >= 0 else first_r)


@njit(cache=True)
def _service(c, rw, entry, t, bank, chan, sc, tim, cnt, res, cfg):
    seq = entry[Q_SEQ]
    b = entry[Q_BANK]
    row = entry[Q_ROW]
    eseg = entry[Q_ESEG]
    pseg = entry[Q_PSEG]
    u = chan[c, C_UNIT]
    start = t if t > bank[b, B_BUSY] else bank[b, B_BUSY]
    hit = 0
    conflict = 0
    if bank[b, B_OPEN] == row:
        ready = start + tim[u, eseg, rw, T_CL]
        hit = 1
        sc[S_HITS] += 1
    else:
        pre = 0
        if bank[b, B_OPEN] >= 0:
            pre = tim[u, bank[b, B_OSEG], rw, T_RP]
            conflict = 1
        ready = start + pre + tim[u, eseg, rw, T_RCD] + tim[u, eseg, rw, T_CL]
        sc[S_MISSES] += 1
    burst = ready if ready > chan[c, C_BUSY] else chan[c, C_BUSY]
    tbl = tim[u, eseg, rw, T_BL]
    end = burst + tbl
    chan[c, C_BUSY] = end
    chan[c, C_BUSYCYC] += tbl
    chan[c, C_DEMCYC] += tbl
    chan[c, C_DEMAND] += 1
    bank[b, B_BUSY] = end
    bank[b, B_OPEN] = row
    bank[b, B_OSEG] = eseg
    bank[b, B_READS + rw] += 1
    bank[b, B_NEAR + pseg] += 1
    cnt[N_DEMAND, u, pseg, rw] += 1
    cnt[N_EFFECTIVE, u, eseg, rw] += 1
    sc[S_LAT] += end - entry[Q_ARR]
    if end > sc[S_LAST]:
        sc[S_LAST] = end
    if cfg[K_RECORD]:
        res[seq, R_START] = start
        res[seq, R_BURST] = burst
        res[seq, R_END] = end
        res[seq, R_HIT] = hit
        res[seq, R_CONFLICT] = conflict
        res[seq, R_WRITE] = rw
    return end


@njit(cache=True)
def _issue(c, t, bank, chan, q, qn, sc, tim, cnt, res, cfg):
    rw, j = _select(c, t, bank, q, qn, cfg)
    if rw < 0:
        raise RuntimeError("no ready request at decision time")
    entry = q[c, rw, j].copy()
    n = qn[c, rw]
    for k in range(j, n - 1):
        q[c, rw, k] = q[c, rw, k + 1]
    qn[c, rw] = n - 1
    chan[c, C_DEC] = -1
    return _service(c, rw, entry, t, bank, chan, sc, tim, cnt, res, cfg)


@njit(cache=True)
def _next_decision(bank, chan, q, qn):
    best = BIG
    bc = -1
    for c in range(chan.shape[0]):
        if qn[c, 0] + qn[c, 1] > 0:
            t = chan[c, C_DEC]
            if t < 0:
                t = _decision(c, bank, q, qn)
                chan[c, C_DEC] = t
            if t < best:
                best = t
                bc = c
    return best, bc


@njit(cache=True)
def _next_retire(iss, sc):
    tmin = BIG
    jmin = -1
    for j in range(sc[S_NISS]):
        if iss[j] < tmin:
            tmin = iss[j]
            jmin = j
    return tmin, jmin


@njit(cache=True)
def _pump_one(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg):
    """Process the earliest event (retire first on ties).  False when idle."""
    best, bc = _next_decision(bank, chan, q, qn)
    tmin, jmin = _next_retire(iss, sc)
    if bc < 0 and jmin < 0:
        return False
    if jmin >= 0 and tmin <= best:
        n = sc[S_NISS]
        iss[jmin] = iss[n - 1]
        sc[S_NISS] = n - 1
        sc[S_OUT] -= 1
        if tmin > sc[S_NOW]:
            sc[S_NOW] = tmin
    else:
        fin = _issue(bc, best, bank, chan, q, qn, sc, tim, cnt, res, cfg)
        iss[sc[S_NISS]] = fin
        sc[S_NISS] += 1
    return True


@njit(cache=True)
def _advance_to(t, bank, chan, q, qn, iss, sc, tim, cnt, res, cfg):
    while True:
        best, bc = _next_decision(bank, chan, q, qn)
        tmin, jmin = _next_retire(iss, sc)
        if (best if best < tmin else tmin) >= t:
            return
        _pump_one(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg)


@njit(cache=True)
def _drain(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg):
    while _pump_one(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg):
        pass


@njit(cache=True)
def _enqueue(c, rw, seq, arr, b, row, eseg, pseg, chan, q, qn, sc):
    j = qn[c, rw]
    q[c, rw, j, Q_SEQ] = seq
    q[c, rw, j, Q_ARR] = arr
    q[c, rw, j, Q_BANK] = b
    q[c, rw, j, Q_ROW] = row
    q[c, rw, j, Q_ESEG] = eseg
    q[c, rw, j, Q_PSEG] = pseg
    qn[c, rw] = j + 1
    chan[c, C_DEC] = -1
    sc[S_OUT] += 1


@njit(cache=True)
def _submit_batch(r_ch, r_bank, r_row, r_eseg, r_pseg, r_w, r_instr,
                  bank, chan, q, qn, iss, sc, tim, cnt, res, cfg):
    cap = cfg[K_MAXOUT]
    qcap = cfg[K_QCAP]
    gnum = cfg[K_GAP_NUM]
    gden = cfg[K_GAP_DEN]
    for i in range(r_ch.shape[0]):
        while sc[S_OUT] >= cap:
            _pump_one(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg)
        if gnum > 0 and sc[S_HAVE_PREV]:
            earliest = sc[S_PREV_ARR] + (gnum * (r_instr[i] - sc[S_PREV_INSTR])) // gden
            if earliest > sc[S_NOW]:
                _advance_to(earliest, bank, chan, q, qn, iss, sc, tim, cnt, res, cfg)
                sc[S_NOW] = earliest
        c = r_ch[i]
        while qn[c, 0] + qn[c, 1] >= qcap:
            _pump_one(bank, chan, q, qn, iss, sc, tim, cnt, res, cfg)
        seq = sc[S_SEQ]
        sc[S_SEQ] = seq + 1
        _enqueue(c, r_w[i], seq, sc[S_NOW], r_bank[i], r_row[i], r_eseg[i], r_pseg[i], chan, q, qn, sc)
        sc[S_PREV_ARR] = sc[S_NOW]
        sc[S_PREV_INSTR] = r_instr[i]
        sc[S_HAVE_PREV] = 1


@njit(cache=True)
def _line_access(u, c, b, row, eseg, rw, t_ready, bank, chan, tim, cnt, out, k):
    start = t_ready if t_ready > bank[b, B_BUSY] else bank[b, B_BUSY]
    if bank[b, B_OPEN] == row:
        ready = start + tim[u, eseg, rw, T_CL]
    else:
        pre = 0
        if bank[b, B_OPEN] >= 0:
            pre = tim[u, bank[b, B_OSEG], rw, T_RP]
        ready = start + pre + tim[u, eseg, rw, T_RCD] + tim[u, eseg, rw, T_CL]
    burst = ready if ready > chan[c, C_BUSY] else chan[c, C_BUSY]
    tbl = tim[u, eseg, rw, T_BL]
    end = burst + tbl
    chan[c, C_BUSY] = end
    chan[c, C_BUSYCYC] += tbl
    chan[c, C_MIGCYC] += tbl
    chan[c, C_MIG] += 1
    bank[b, B_BUSY] = end
    bank[b, B_OPEN] = row
    bank[b, B_OSEG] = eseg
    bank[b, B_READS + rw] += 1
    cnt[N_MIGRATION, u, eseg, rw] += 1
    out[k, 0] = start
    out[k, 1] = end
    out[k, 2] = burst
    out[k, 3] = tbl
    return end


@njit(cache=True)
def _migrate_stream(su, s_ch, s_bank, s_row, s_eseg, du, d_ch, d_bank, d_row, d_eseg, t0,
                    bank, chan, tim, cnt):
    n = s_ch.shape[0]
    out = np.empty((2 * n, 4), np.int64)
    end_all = t0
    for i in range(n):
        rd = _line_access(su, s_ch[i], s_bank[i], s_row[i], s_eseg, 0, t0, bank, chan, tim, cnt, out, 2 * i)
        wr = _line_access(du, d_ch[i], d_bank[i], d_row[i], d_eseg, 1, rd, bank, chan, tim, cnt, out,
                          2 * i + 1)
        if wr > end_all:
            end_all = wr
    return end_all, out


@njit(cache=True)
def _migrate_intra(u, banks, src_eseg, dst_eseg, lines_per_bank, t0, bank, tim, cnt):
    cost = tim[u, src_eseg, 0, T_RC] + tim[u, dst_eseg, 1, T_RC]
    out = np.empty((banks.shape[0], 2), np.int64)
    end_all = t0
    for i in range(banks.shape[0]):
        b = banks[i]
        start = t0 if t0 > bank[b, B_BUSY] else bank[b, B_BUSY]
        end = start + cost
        bank[b, B_BUSY] = end
        bank[b, B_OPEN] = -1
        bank[b, B_READS] += lines_per_bank
        bank[b, B_WRITES] += lines_per_bank
        out[i, 0] = start
        out[i, 1] = end
        if end > end_all:
            end_all = end
    n = lines_per_bank * banks.shape[0]
    cnt[N_MIGRATION, u, src_eseg, 0] += n
    cnt[N_MIGRATION, u, dst_eseg, 1] += n
    return end_all, out


# --------------------------------------------------------------- python face

@dataclass(frozen=True)
class BankState:
    open_row: Optional[int]
    open_segment: Optional[Segment]
    busy_until: int
    reads: int
    writes: int
    near: int
    far: int


@dataclass(frozen=True)
class ChannelState:
    busy_until: int
    busy_cycles: int
    demand_bursts: int
    migration_bursts: int
    demand_cycles: int = 0
    migration_cycles: int = 0


class MemoryController:
    """Discrete-event controller for every channel of every configured unit.

    Units without bitline segmentation use their far-segment timing for every
    row.  ``max_outstanding`` limits in-flight demand requests; a request
    waits in its channel's read or write queue until the scheduler issues it.
    """

    def __init__(self, geometries: Dict[Unit, MemoryGeometry], tables: DeviceTables = DEFAULT_TABLES,
                 segmented: Optional[Dict[Unit, bool]] = None, queue_capacity: int = 64,
                 write_high: int = 32, write_starvation: int = 4096, record_events: bool = False,
                 max_outstanding: int = 16, issue_cycles_per_instr=0):
        self.geometries = dict(geometries)
        self.tables = tables
        self.segmented = {u: True for u in geometries} if segmented is None else dict(segmented)
        self.queue_capacity = queue_capacity
        self.record_events = record_events
        self.max_outstanding = max_outstanding

        self.chan_base: Dict[Unit, int] = {}
        self.bank_base: Dict[Unit, int] = {}
        nc = nb = 0
        for unit, g in self.geometries.items():
            self.chan_base[unit], self.bank_base[unit] = nc, nb
            nc += g.channels
            nb += g.n_banks
        self.tim = np.zeros((2, 2, 2, 5), np.int64)
        for unit, g in self.geometries.items():
            for seg in Segment:
                for rw, op in enumerate((Op.READ, Op.WRITE)):
                    cyc = tables.lookup_timing(unit, seg, op).cycles(g.clock_mhz)
                    self.tim[UNIT_CODE[unit], SEG_CODE[seg], rw] = (cyc.tRCD, cyc.tCL, cyc.tBL, cyc.tRP, cyc.tRC)
        self.bank = np.zeros((nb, 7), np.int64)
        self.bank[:, B_OPEN] = -1
        self.chan = np.zeros((nc, 8), np.int64)
        self.chan[:, C_DEC] = -1
        for unit, base in self.chan_base.items():
            self.chan[base:base + self.geometries[unit].channels, C_UNIT] = UNIT_CODE[unit]
        self.q = np.zeros((nc, 2, queue_capacity, 6), np.int64)
        self.qn = np.zeros((nc, 2), np.int64)
        self.iss = np.zeros(nc * queue_capacity + max_outstanding + 1, np.int64)
        self.sc = np.zeros(11, np.int64)
        self.cnt = np.zeros((3, 2, 2, 2), np.int64)
        gap = Fraction(issue_cycles_per_instr).limit_denominator(1000)
        if gap < 0:
            raise ValueError("issue_cycles_per_instr must be non-negative")
        self.cfg = np.array([queue_capacity, write_high, write_starvation, int(record_events),
                             max_outstanding, gap.numerator, gap.denominator], np.int64)
        self.res = np.zeros((0, 6), np.int64)
        self._meta: List[np.ndarray] = []  # per-batch (unit, channel, bank, row, pseg) when recording
        self._mig_events: List[tuple] = []
        self.migrations = Counter()
        self.migration_bursts_by_kind = Counter()

        self._fields = {}
        for unit, g in self.geometries.items():
            bf = g.bit_fields
            self._fields[unit] = (bf["channel"][0], g.channels - 1, bf["bank"][0], g.banks_per_rank - 1,
                                  bf["rank"][0], g.ranks_per_channel - 1, bf["row"][0],
                                  g.ranks_per_channel, g.banks_per_rank)

    def _state(self):
        return (self.bank, self.chan, self.q, self.qn, self.iss, self.sc, self.tim, self.cnt,
                self.res, self.cfg)

    # ------------------------------------------------------------- addressing

    def effective_segment(self, unit: Unit, segment: Segment) -> Segment:
        """Unsegmented arrays behave like their far segment everywhere."""
        return segment if self.segmented.get(unit, True) else Segment.FAR

    def locate(self, unit: Unit, paddr):
        """``(global channel, global bank, row key)``; works on ints and numpy arrays."""
        ch_lo, ch_m, bk_lo, bk_m, rk_lo, rk_m, row_lo, n_ranks, n_banks = self._fields[unit]
        ch = (paddr >> ch_lo) & ch_m
        bank = ((ch * n_ranks + ((paddr >> rk_lo) & rk_m)) * n_banks) + ((paddr >> bk_lo) & bk_m)
        return ch + self.chan_base[unit], bank + self.bank_base[unit], paddr >> row_lo

    # -------------------------------------------------------------- requests

    @property
    def now(self) -> int:
        return int(self.sc[S_NOW])

    @property
    def n_outstanding(self) -> int:
        return int(self.sc[S_OUT])

    @property
    def last_finish(self) -> int:
        return int(self.sc[S_LAST])

    def _ensure_results(self, n_more: int) -> None:
        if not self.record_events:
            return
        need = int(self.sc[S_SEQ]) + n_more
        if need > self.res.shape[0]:
            grown = np.zeros((max(need, 2 * self.res.shape[0]), 6), np.int64)
            grown[:self.res.shape[0]] = self.res
            self.res = grown

    def submit_batch(self, unit_codes, paddrs, psegs, is_write, instr=None) -> None:
        """Feed demand requests through the front end in order.

        ``unit_codes`` uses 0 for DRAM and 1 for PCM, ``psegs`` 0 for near and 1 for far.
        """
        unit_codes = np.asarray(unit_codes, np.int64)
        paddrs = np.asarray(paddrs, np.int64)
        psegs = np.asarray(psegs, np.int64)
        rw = np.asarray(is_write, np.int64)
        n = paddrs.shape[0]
        if not n:
            return
        ch = np.empty(n, np.int64)
        bk = np.empty(n, np.int64)
        row = np.empty(n, np.int64)
        eseg = psegs.copy()
        for unit, code in UNIT_CODE.items():
            sel = unit_codes == code
            if not sel.any():
                continue
            if unit not in self.geometries:
                raise ValueError(f"no {unit.value} unit configured")
            ch[sel], bk[sel], row[sel] = self.locate(unit, paddrs[sel])
            if not self.segmented.get(unit, True):
                eseg[sel] = SEG_CODE[Segment.FAR]
        instr = np.zeros(n, np.int64) if instr is None else np.asarray(instr, np.int64)
        self._ensure_results(n)
        if self.record_events:
            self._meta.append(np.stack([unit_codes, ch, bk, row, psegs]))
        _submit_batch(ch, bk, row, eseg, psegs, rw, instr, *self._state())

    def submit(self, unit: Unit, paddr: int, segment: Segment, is_write: bool, instr: int = 0) -> int:
        """Submit one request; returns its sequence number."""
        seq = int(self.sc[S_SEQ])
        self.submit_batch([UNIT_CODE[unit]], [paddr], [SEG_CODE[segment]], [int(is_write)], [instr])
        return seq

    def enqueue(self, unit: Unit, paddr: int, segment: Segment, is_write: bool,
                arrival: Optional[int] = None) -> int:
        """Place a request straight into its queue, bypassing the front-end limit."""
        c, b, row = self.locate(unit, paddr)
        if self.qn[c].sum() >= self.queue_capacity:
            raise QueueFull(f"{unit.value} channel {c - self.chan_base[unit]} queue is full")
        seq = int(self.sc[S_SEQ])
        self.sc[S_SEQ] = seq + 1
        self._ensure_results(1)
        eseg = SEG_CODE[self.effective_segment(unit, segment)]
        if self.record_events:
            self._meta.append(np.array([[UNIT_CODE[unit]], [c], [b], [row], [SEG_CODE[segment]]], np.int64))
        _enqueue(c, int(is_write), seq, self.now if arrival is None else arrival, b, row, eseg,
                 SEG_CODE[segment], self.chan, self.q, self.qn, self.sc)
        return seq

    def schedule(self, unit: Unit, channel: int, now: int) -> Optional[int]:
        """Sequence number FR-FCFS would issue next on a channel at ``now``, or None."""
        c = self.chan_base[unit] + channel
        rw, j = _select(c, now, self.bank, self.q, self.qn, self.cfg)
        return None if rw < 0 else int(self.q[c, rw, j, Q_SEQ])

    def step(self) -> bool:
        """Process the earliest pending event; False when nothing is left."""
        return bool(_pump_one(*self._state()))

    def advance_to(self, t: int) -> None:
        """Process every event strictly before cycle ``t``."""
        _advance_to(int(t), *self._state())

    def drain(self) -> int:
        _drain(*self._state())
        return self.last_finish

    # ------------------------------------------------------------- migration

    def migrate(self, move: Move, page_size: int = PAGE_SIZE) -> int:
        """Reserve banks/channels for one page move starting at the current cycle.

        Same-unit same-rank moves stay inside each bank: a read row cycle of
        the source tier and a write row cycle of the destination, with no
        channel traffic.  Anything else streams the page line by line over
        the channels of both units.  Busy resources only delay the move.
        """
        if move.src_unit is move.dst_unit and move.src_frame == move.dst_frame:
            raise ValueError("migration source and destination are the same frame")
        self.advance_to(self.now)
        t0 = self.now
        src_eff = SEG_CODE[self.effective_segment(move.src_unit, move.src_segment)]
        dst_eff = SEG_CODE[self.effective_segment(move.dst_unit, move.dst_segment)]
        if move.intra_bank:
            unit = move.src_unit
            g = self.geometries[unit]
            ch_lo, bk_lo = self._fields[unit][0], self._fields[unit][2]
            addrs = np.array([move.src_frame | (c << ch_lo) | (b << bk_lo)
                              for c in range(g.channels) for b in range(g.banks_per_rank)], np.int64)
            chans, banks, rows = self.locate(unit, addrs)
            lpb = max(1, page_size // (LINE_SIZE * g.channels * g.banks_per_rank))
            end, out = _migrate_intra(UNIT_CODE[unit], banks, src_eff, dst_eff, lpb, t0,
                                      self.bank, self.tim, self.cnt)
            kind = "intra_bank"
            if self.record_events:
                for i in range(len(banks)):
                    self._mig_events.append((int(out[i, 0]), int(out[i, 1]), "MIG-INTRA", unit.value,
                                             int(chans[i] - self.chan_base[unit]),
                                             int(banks[i] - self.bank_base[unit]), int(rows[i]),
                                             CODE_SEG[dst_eff].value, "migration", None, 0))
        else:
            offs = np.arange(0, page_size, LINE_SIZE, dtype=np.int64)
            s_ch, s_bk, s_row = self.locate(move.src_unit, move.src_frame | offs)
            d_ch, d_bk, d_row = self.locate(move.dst_unit, move.dst_frame | offs)
            end, out = _migrate_stream(UNIT_CODE[move.src_unit], s_ch, s_bk, s_row, src_eff,
                                       UNIT_CODE[move.dst_unit], d_ch, d_bk, d_row, dst_eff, t0,
                                       self.bank, self.chan, self.tim, self.cnt)
            kind = "cross_unit" if move.src_unit is not move.dst_unit else "cross_bank"
            self.migration_bursts_by_kind[kind] += 2 * len(offs)
            if self.record_events:
                for i in range(len(offs)):
                    for k, (u, c, b, r, cmd, seg) in enumerate((
                            (move.src_unit, s_ch[i], s_bk[i], s_row[i], "MIG-RD", src_eff),
                            (move.dst_unit, d_ch[i], d_bk[i], d_row[i], "MIG-WR", dst_eff))):
                        o = out[2 * i + k]
                        self._mig_events.append((int(o[0]), int(o[1]), cmd, u.value,
                                                 int(c - self.chan_base[u]), int(b - self.bank_base[u]),
                                                 int(r), CODE_SEG[seg].value, "migration",
                                                 int(o[2]), int(o[3])))
        self.migrations[kind] += 1
        self.chan[:, C_DEC] = -1
        end = int(end)
        if end > self.sc[S_LAST]:
            self.sc[S_LAST] = end
        return end

    # ---------------------------------------------------------------- totals

    def _counts(self, kind: int) -> Counter:
        out = Counter()
        for unit in self.geometries:
            for seg in Segment:
                for rw in (0, 1):
                    n = int(self.cnt[kind, UNIT_CODE[unit], SEG_CODE[seg], rw])
                    if n:
                        out[(unit, seg, bool(rw))] = n
        return out

    @property
    def demand_counts(self) -> Counter:
        """Demand accesses keyed ``(unit, row segment, is_write)``."""
        return self._counts(N_DEMAND)

    @property
    def effective_counts(self) -> Counter:
        """Demand accesses keyed by the segment whose timing applied."""
        return self._counts(N_EFFECTIVE)

    @property
    def migration_line_counts(self) -> Counter:
        return self._counts(N_MIGRATION)

    @property
    def row_hits(self) -> int:
        return int(self.sc[S_HITS])

    @property
    def row_misses(self) -> int:
        return int(self.sc[S_MISSES])

    @property
    def latency_sum(self) -> int:
        return int(self.sc[S_LAT])

    @property
    def demand_bursts(self) -> int:
        return int(self.chan[:, C_DEMAND].sum())

    @property
    def migration_bursts(self) -> int:
        return int(self.chan[:, C_MIG].sum())

    def channel_state(self, unit: Unit, channel: int) -> ChannelState:
        r = self.chan[self.chan_base[unit] + channel]
        return ChannelState(int(r[C_BUSY]), int(r[C_BUSYCYC]), int(r[C_DEMAND]), int(r[C_MIG]),
                            int(r[C_DEMCYC]), int(r[C_MIGCYC]))

    def channels(self) -> Iterator[Tuple[Unit, int, ChannelState]]:
        for unit, g in self.geometries.items():
            for c in range(g.channels):
                yield unit, c, self.channel_state(unit, c)

    def bank_state(self, unit: Unit, bank: int) -> BankState:
        """``bank`` is the unit-local flat index ``(channel*ranks + rank)*banks + bank``."""
        r = self.bank[self.bank_base[unit] + bank]
        open_row = None if r[B_OPEN] < 0 else int(r[B_OPEN])
        return BankState(open_row, None if open_row is None else CODE_SEG[r[B_OSEG]], int(r[B_BUSY]),
                         int(r[B_READS]), int(r[B_WRITES]), int(r[B_NEAR]), int(r[B_FAR]))

    def pcm_bank_writes(self) -> List[int]:
        if Unit.PCM not in self.geometries:
            return []
        base, n = self.bank_base[Unit.PCM], self.geometries[Unit.PCM].n_banks
        return self.bank[base:base + n, B_WRITES].tolist()

    # ------------------------------------------------------------ event log

    def demand_result(self, seq: int) -> dict:
        """Start, burst and end cycle of a serviced request (needs ``record_events``)."""
        r = self.res[seq]
        return {"start": int(r[R_START]), "burst": int(r[R_BURST]), "end": int(r[R_END]),
                "row_hit": bool(r[R_HIT])}

    @property
    def events(self) -> List[tuple]:
        """Every reservation as ``(cycle, end, command, unit, channel, bank, row, segment,
        kind, burst, tBL)`` sorted by cycle.  Empty unless ``record_events``."""
        if not self.record_events:
            return []
        out = list(self._mig_events)
        units = {v: k for k, v in UNIT_CODE.items()}
        seq = 0
        for meta in self._meta:
            for i in range(meta.shape[1]):
                r = self.res[seq]
                seq += 1
                if r[R_END] == 0:
                    continue  # not serviced yet
                u = units[int(meta[0, i])]
                op = "WR" if r[R_WRITE] else "RD"
                cmd = op if r[R_HIT] else ("PRE+ACT+" if r[R_CONFLICT] else "ACT+") + op
                out.append((int(r[R_START]), int(r[R_END]), cmd, u.value,
                            int(meta[1, i] - self.chan_base[u]), int(meta[2, i] - self.bank_base[u]),
                            int(meta[3, i]), CODE_SEG[meta[4, i]].value, "demand", int(r[R_BURST]),
                            int(r[R_END] - r[R_BURST])))
        out.sort(key=lambda e: (e[0], e[3], e[5], e[2]))
        return out


_EVENT_KEYS = ("cycle", "end", "command", "unit", "channel", "bank", "row", "segment", "kind",
               "burst", "tBL")


def event_dict(rec: tuple) -> dict:
    return dict(zip(_EVENT_KEYS, rec))


def write_event_log(events: Iterable[tuple], path) -> None:
    with open(path, "w") as fh:
        for rec in events:
            fh.write(json.dumps(event_dict(rec), sort_keys=True) + "\n")


def audit_intervals(events: Iterable) -> List[tuple]:
    """Return overlapping bank or channel reservations; empty means the log is clean.

    Accepts tuples from :attr:`MemoryController.events` or dicts from an NDJSON log.
    """
    bank_iv: Dict[tuple, List[Tuple[int, int]]] = {}
    chan_iv: Dict[tuple, List[Tuple[int, int]]] = {}
    for rec in events:
        e = rec if isinstance(rec, dict) else event_dict(rec)
        bank_iv.setdefault((e["unit"], e["bank"]), []).append((e["cycle"], e["end"]))
        if e.get("burst") is not None:
            chan_iv.setdefault((e["unit"], e["channel"]), []).append((e["burst"], e["burst"] + e["tBL"]))
    bad = []
    for kind, table in (("bank", bank_iv), ("channel", chan_iv)):
        for key, ivs in table.items():
            ivs.sort()
            for (s0, e0), (s1, e1) in zip(ivs, ivs[1:]):
                if s1 < e0:
                    bad.append((kind, key, (s0, e0), (s1, e1)))
    return bad

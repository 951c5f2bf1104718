"""First-touch-instruction tables (two Bloom filters) and the access intensity record."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import Op

_MASK64 = (1 << 64) - 1
U16_MAX = (1 << 16) - 1
U32_MAX = (1 << 32) - 1

SNAPSHOT_MAGIC = b"FTIP"
SNAPSHOT_VERSION = 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class BloomFilter:
    """Fixed-size Bloom filter over integer keys with ``k`` salted 64-bit hashes."""

    __slots__ = ("m", "k", "hash_seed", "bits", "n_inserted", "_salts")

    def __init__(self, m: int = 128, k: int = 3, hash_seed: int = 0):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        self.m = m
        self.k = k
        self.hash_seed = hash_seed
        self.bits = 0
        self.n_inserted = 0
        # one salt per hash function; plain double hashing correlates positions when m is a power of two
        self._salts = tuple(_mix64((hash_seed * k + i) & _MASK64) for i in range(k))

    def positions(self, element: int) -> List[int]:
        m = self.m
        e = element & _MASK64
        return [_mix64(e ^ s) % m for s in self._salts]

    def insert(self, element: int) -> None:
        for p in self.positions(element):
            self.bits |= 1 << p
        self.n_inserted += 1

    def query(self, element: int) -> bool:
        """True means maybe-present, False means definitely absent."""
        bits = self.bits
        for p in self.positions(element):
            if not (bits >> p) & 1:
                return False
        return True

    __contains__ = query

    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes((self.m + 7) // 8, "little")

    def load_bytes(self, data: bytes) -> None:
        self.bits = int.from_bytes(data, "little")


def bloom_insert(filt: BloomFilter, element: int) -> BloomFilter:
    filt.insert(element)
    return filt


def bloom_query(filt: BloomFilter, element: int) -> bool:
    return filt.query(element)


def expected_fp_rate(m: int, k: int, n: int) -> float:
    if m <= 0 or k <= 0 or n < 0:
        raise ValueError("m, k must be positive and n non-negative")
    return (1.0 - math.exp(-k * n / m)) ** k


@dataclass
class AirEntry:
    valid: bool = False
    pc: int = 0
    read_pages: int = 0
    write_pages: int = 0
    accesses: int = 0

    PACK = struct.Struct("<BQHHI")

    def pack(self) -> bytes:
        return self.PACK.pack(int(self.valid), self.pc, self.read_pages, self.write_pages, self.accesses)


# placement prediction classes returned by FTIPredictor.predict
UNKNOWN, READ_INTENSIVE, WRITE_INTENSIVE, BOTH = 0, 1, 2, 3


class FTIPredictor(BaseEstimator):
    """Predicts the access intensity of a new page from its first-touch PC.

    ``fti_w``/``fti_r`` hold PCs whose pages were write/read intensive in some
    earlier phase.  Unknown PCs are profiled in a small LFU table (the AIR)
    and promoted into the filters at :meth:`phase_commit` once their
    per-phase access count exceeds ``promotion_threshold``.  A threshold of
    ``None`` disables promotion entirely.
    """

    def __init__(self, bloom_bits: int = 128, bloom_hashes: int = 3, air_entries: int = 8,
                 promotion_threshold: Optional[int] = 64, seed: int = 0):
        self.bloom_bits = bloom_bits
        self.bloom_hashes = bloom_hashes
        self.air_entries = air_entries
        self.promotion_threshold = promotion_threshold
        self.seed = seed
        self.reset()

    def reset(self) -> "FTIPredictor":
        if self.air_entries <= 0:
            raise ValueError("air_entries must be positive")
        self.fti_w = BloomFilter(self.bloom_bits, self.bloom_hashes, self.seed * 2 + 1)
        self.fti_r = BloomFilter(self.bloom_bits, self.bloom_hashes, self.seed * 2 + 2)
        self.air: List[AirEntry] = [AirEntry() for _ in range(self.air_entries)]
        self._slot: Dict[int, int] = {}
        self.promoted_total = 0
        return self

    # sklearn-style entry points
    def fit(self, X, y=None):
        """Profile one phase from ``(pc, page_id, op)`` records and commit it."""
        self.reset()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        pages: Dict[int, List[int]] = {}
        for pc, page, op in X:
            pc, page = int(pc), int(page)
            self.air_record(pc, page, op)
            rw = pages.setdefault(page, [pc, 0, 0])
            rw[2 if Op(op) is Op.WRITE else 1] += 1
        for pc, r, w in pages.values():
            self.air_classify(pc, write_inducing=w >= r)
        self.phase_commit()
        return self

    def predict(self, pcs) -> np.ndarray:
        return np.array([self.lookup(int(pc)) for pc in pcs], dtype=np.int8)

    def lookup(self, pc: int) -> int:
        w = self.fti_w.query(pc)
        r = self.fti_r.query(pc)
        return (WRITE_INTENSIVE if w else 0) | (READ_INTENSIVE if r else 0)

    def air_record(self, pc: int, page_id: int = 0, op=Op.READ) -> AirEntry:
        idx = self._slot.get(pc)
        if idx is not None:
            e = self.air[idx]
            if e.accesses < U32_MAX:
                e.accesses += 1
            return e
        idx = self._free_or_lfu_slot()
        old = self.air[idx]
        if old.valid:
            del self._slot[old.pc]
        e = self.air[idx] = AirEntry(valid=True, pc=pc, accesses=1)
        self._slot[pc] = idx
        return e

    def _free_or_lfu_slot(self) -> int:
        best, best_count = -1, None
        for i, e in enumerate(self.air):
            if not e.valid:
                return i
            if best_count is None or e.accesses < best_count:
                best, best_count = i, e.accesses
        return best

    def air_classify(self, pc: int, write_inducing: bool) -> None:
        idx = self._slot.get(pc)
        if idx is None:
            return
        e = self.air[idx]
        if write_inducing:
            e.write_pages = min(e.write_pages + 1, U16_MAX)
        else:
            e.read_pages = min(e.read_pages + 1, U16_MAX)

    def valid_entries(self) -> List[AirEntry]:
        return [e for e in self.air if e.valid]

    def phase_commit(self) -> List[AirEntry]:
        """Promote hot AIR entries into the filters, then invalidate the AIR."""
        promoted = []
        thr = self.promotion_threshold
        for e in self.air:
            if not e.valid:
                continue
            if thr is not None and e.accesses > thr:
                if e.write_pages >= e.read_pages:
                    self.fti_w.insert(e.pc)
                if e.read_pages >= e.write_pages:
                    self.fti_r.insert(e.pc)
                promoted.append(AirEntry(**vars(e)))
            e.valid = False
        self._slot.clear()
        self.promoted_total += len(promoted)
        return promoted

    # checkpoint format: see README "Predictor snapshot"
    _HEADER = struct.Struct("<4sHHHHqq")

    def to_bytes(self) -> bytes:
        thr = -1 if self.promotion_threshold is None else self.promotion_threshold
        out = [self._HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.bloom_bits, self.bloom_hashes,
                                 self.air_entries, thr, self.seed)]
        out.append(self.fti_w.to_bytes())
        out.append(self.fti_r.to_bytes())
        out.extend(e.pack() for e in self.air)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FTIPredictor":
        h = cls._HEADER
        if len(data) < h.size:
            raise ValueError("truncated predictor snapshot")
        magic, version, m, k, d, thr, seed = h.unpack_from(data)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError("not a predictor snapshot")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        p = cls(m, k, d, None if thr < 0 else thr, seed)
        nb = (m + 7) // 8
        off = h.size
        expected = off + 2 * nb + d * AirEntry.PACK.size
        if len(data) != expected:
            raise ValueError(f"snapshot length {len(data)} != {expected}")
        p.fti_w.load_bytes(data[off:off + nb])
        p.fti_r.load_bytes(data[off + nb:off + 2 * nb])
        off += 2 * nb
        for i in range(d):
            valid, pc, rp, wp, acc = AirEntry.PACK.unpack_from(data, off)
            off += AirEntry.PACK.size
            p.air[i] = AirEntry(bool(valid), pc, rp, wp, acc)
            if valid:
                p._slot[pc] = i
        return p


def air_record(state: FTIPredictor, pc: int, page_id: int, op) -> FTIPredictor:
    state.air_record(pc, page_id, op)
    return state


def phase_commit(state: FTIPredictor) -> FTIPredictor:
    state.phase_commit()
    return state


def measured_fp_rate(filt: BloomFilter, probes: Iterable[int]) -> float:
    n = hits = 0
    for x in probes:
        n += 1
        hits += filt.query(x)
    return hits / n if n else 0.0

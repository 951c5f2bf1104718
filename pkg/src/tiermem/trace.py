"""Post-cache memory traces: text/binary formats and synthetic generators.

Text format, one request per line::

    instr_index,pc,op,vaddr
    100,0x400123,R,0x7f0000001000

``instr_index`` is decimal, ``pc`` and ``vaddr`` are 0x-prefixed hex, ``op``
is ``R`` or ``W``.  Blank lines, ``#`` comments and a leading header line are
ignored.  The binary format is a 16-byte header (magic ``TMTR``, u16 version,
u16 reserved, u64 record count) followed by packed little-endian records of
``u64 instr_index, u64 pc, u8 op (0=R, 1=W), u64 vaddr``.  Either format may
be gzip-compressed.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import PAGE_SIZE, LINE_SIZE, Op

BIN_MAGIC = b"TMTR"
BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("instr", "<u8"), ("pc", "<u8"), ("op", "u1"), ("vaddr", "<u8")])
CSV_HEADER = "instr_index,pc,op,vaddr"


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class MonotonicityError(ParseError):
    pass


class MemoryRequest(NamedTuple):
    instr_index: int
    pc: int
    op: Op
    vaddr: int

    @property
    def is_write(self) -> bool:
        return self.op is Op.WRITE

    @property
    def vpn(self) -> int:
        return self.vaddr // PAGE_SIZE


class Trace:
    """Columnar in-memory trace backed by numpy arrays."""

    def __init__(self, instr, pc, is_write, vaddr):
        self.instr = np.ascontiguousarray(instr, dtype=np.uint64)
        self.pc = np.ascontiguousarray(pc, dtype=np.uint64)
        self.is_write = np.ascontiguousarray(is_write, dtype=bool)
        self.vaddr = np.ascontiguousarray(vaddr, dtype=np.uint64)
        n = len(self.instr)
        if not (len(self.pc) == len(self.is_write) == len(self.vaddr) == n):
            raise ValueError("trace columns have different lengths")

    @classmethod
    def from_requests(cls, reqs: Iterable[MemoryRequest]) -> "Trace":
        rows = list(reqs)
        if not rows:
            return cls.empty()
        instr, pc, op, vaddr = zip(*rows)
        return cls(np.array(instr, dtype=np.uint64), np.array(pc, dtype=np.uint64),
                   np.array([Op(o) is Op.WRITE for o in op]), np.array(vaddr, dtype=np.uint64))

    @classmethod
    def empty(cls) -> "Trace":
        z = np.zeros(0, dtype=np.uint64)
        return cls(z, z, np.zeros(0, dtype=bool), z)

    def __len__(self) -> int:
        return len(self.instr)

    def __iter__(self) -> Iterator[MemoryRequest]:
        for i, p, w, v in zip(self.instr.tolist(), self.pc.tolist(), self.is_write.tolist(),
                              self.vaddr.tolist()):
            yield MemoryRequest(i, p, Op.WRITE if w else Op.READ, v)

    def __getitem__(self, idx) -> MemoryRequest:
        return MemoryRequest(int(self.instr[idx]), int(self.pc[idx]),
                             Op.WRITE if self.is_write[idx] else Op.READ, int(self.vaddr[idx]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (len(self) == len(other) and np.array_equal(self.instr, other.instr)
                and np.array_equal(self.pc, other.pc) and np.array_equal(self.is_write, other.is_write)
                and np.array_equal(self.vaddr, other.vaddr))

    def records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["instr"], rec["pc"], rec["op"], rec["vaddr"] = self.instr, self.pc, self.is_write, self.vaddr
        return rec

    def digest(self) -> str:
        return hashlib.sha256(self.records().tobytes()).hexdigest()

    @property
    def vpn(self) -> np.ndarray:
        return self.vaddr // np.uint64(PAGE_SIZE)

    def concat(self, other: "Trace") -> "Trace":
        return Trace(np.concatenate([self.instr, other.instr]), np.concatenate([self.pc, other.pc]),
                     np.concatenate([self.is_write, other.is_write]),
                     np.concatenate([self.vaddr, other.vaddr]))


def _parse_int(tok: str, lineno: int, what: str) -> int:
    tok = tok.strip()
    try:
        if tok[:2].lower() == "0x":
            return int(tok, 16)
        return int(tok, 10)
    except ValueError:
        raise ParseError(lineno, f"bad {what} {tok!r}") from None


def parse_trace(stream: Iterable[str]) -> Iterator[MemoryRequest]:
    """Yield requests from text lines; raises :class:`ParseError` with the line number."""
    last = -1
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if lineno == 1 and line.replace(" ", "").lower() == CSV_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
        instr = _parse_int(parts[0], lineno, "instr_index")
        pc = _parse_int(parts[1], lineno, "pc")
        op_tok = parts[2].strip().upper()
        if op_tok not in ("R", "W"):
            raise ParseError(lineno, f"bad op {parts[2]!r}")
        vaddr = _parse_int(parts[3], lineno, "vaddr")
        if min(instr, pc, vaddr) < 0:
            raise ParseError(lineno, "negative field")
        if instr < last:
            raise MonotonicityError(lineno, f"instr_index {instr} < previous {last}")
        last = instr
        yield MemoryRequest(instr, pc, Op(op_tok), vaddr)


def format_request(r: MemoryRequest) -> str:
    return f"{r.instr_index},{r.pc:#x},{Op(r.op).value},{r.vaddr:#x}"


def _open_binary(path: Union[str, Path]) -> IO[bytes]:
    f = open(path, "rb")
    head = f.read(2)
    f.seek(0)
    if head == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=f)
    return f


def read_trace(path: Union[str, Path]) -> Trace:
    with _open_binary(path) as f:
        data = f.read()
    if data[:4] == BIN_MAGIC:
        return _from_binary(data)
    text = data.decode("utf-8")
    return Trace.from_requests(parse_trace(io.StringIO(text)))


def iter_trace_file(path: Union[str, Path]) -> Iterator[MemoryRequest]:
    with _open_binary(path) as f:
        head = f.read(4)
        f.seek(0)
        if head == BIN_MAGIC:
            yield from _from_binary(f.read())
            return
        yield from parse_trace(io.TextIOWrapper(f, encoding="utf-8"))


def _from_binary(data: bytes) -> Trace:
    if len(data) < _BIN_HEADER.size:
        raise ParseError(0, "truncated binary header")
    magic, version, _, count = _BIN_HEADER.unpack_from(data)
    if version != BIN_VERSION:
        raise ParseError(0, f"unsupported binary trace version {version}")
    body = data[_BIN_HEADER.size:]
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise ParseError(0, f"binary trace declares {count} records but holds {len(body)} bytes")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    if np.any(rec["op"] > 1):
        raise ParseError(0, "bad op code in binary trace")
    bad = np.flatnonzero(np.diff(rec["instr"].astype(np.int64)) < 0)
    if bad.size:
        raise MonotonicityError(int(bad[0]) + 2, "instr_index decreased")
    return Trace(rec["instr"], rec["pc"], rec["op"].astype(bool), rec["vaddr"])


def write_trace(trace: Trace, path: Union[str, Path], fmt: str = "csv", compress: Optional[bool] = None) -> None:
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    if fmt == "csv":
        payload = "".join(format_request(r) + "\n" for r in trace).encode()
    elif fmt == "bin":
        payload = _BIN_HEADER.pack(BIN_MAGIC, BIN_VERSION, 0, len(trace)) + trace.records().tobytes()
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    if compress:
        # no name or mtime in the header keeps compressed output byte-stable
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(payload)
    else:
        path.write_bytes(payload)


# --------------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class WorkloadParams:
    """Parameters of a synthetic FTI-skewed workload.

    Every phase each FTI first-touches ``pages_per_fti`` fresh pages, and all
    accesses to a page carry its FTI as the PC.  ``hot_access_share`` of the
    accesses go to pages of the hot FTIs.  ``tail_accesses`` appends a short
    partial phase (fresh pages, same FTIs) so the last full phase's boundary
    fires.
    """

    n_ftis: int = 40
    hot_fraction: float = 0.17
    hot_access_share: float = 0.90
    pages_per_fti: int = 8
    page_zipf: float = 0.0
    write_heavy_fraction: float = 0.5
    rw_bias: float = 0.8
    n_phases: int = 8
    n_accesses: int = 200_000
    phase_length: int = 100_000_000
    tail_accesses: int = 0
    shift_phases: Tuple[int, ...] = ()
    overlap: int = 0
    pc_base: int = 0x400000
    vaddr_base: int = 0x7F0000000000
    seed: int = 0

    def __post_init__(self):
        for name in ("hot_fraction", "hot_access_share", "write_heavy_fraction", "rw_bias"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} not in [0, 1]")
        if self.n_ftis < 1 or self.pages_per_fti < 1 or self.n_phases < 1:
            raise ValueError("n_ftis, pages_per_fti and n_phases must be positive")
        if self.n_accesses < 0 or self.tail_accesses < 0 or self.phase_length < 1:
            raise ValueError("bad access counts or phase length")
        if not 0 <= self.overlap <= self.n_ftis:
            raise ValueError("overlap must be within [0, n_ftis]")
        object.__setattr__(self, "shift_phases", tuple(int(p) for p in self.shift_phases))

    @property
    def n_hot(self) -> int:
        if self.hot_fraction == 0:
            return 0
        return min(self.n_ftis, max(1, int(round(self.hot_fraction * self.n_ftis))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift_phases"] = list(self.shift_phases)
        return d


def _fti_pc(wl: WorkloadParams, fti_id: int) -> int:
    return wl.pc_base + 0x40 * fti_id


def _working_sets(wl: WorkloadParams, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per working-set segment: (fti ids, hot mask)."""
    n_segments = len(wl.shift_phases) + 1
    out = []
    next_id = 0
    prev = None
    for _ in range(n_segments):
        if prev is None:
            ids = np.arange(wl.n_ftis)
            next_id = wl.n_ftis
        else:
            keep = prev[:wl.overlap]
            fresh = np.arange(next_id, next_id + wl.n_ftis - wl.overlap)
            next_id += wl.n_ftis - wl.overlap
            ids = np.concatenate([keep, fresh])
        hot = np.zeros(wl.n_ftis, dtype=bool)
        hot[rng.choice(wl.n_ftis, size=wl.n_hot, replace=False)] = True
        out.append((ids, hot))
        prev = ids
    return out


def _generate(wl: WorkloadParams) -> Trace:
    rng = np.random.default_rng(wl.seed)
    sets = _working_sets(wl, rng)
    # write-heaviness is a property of the instruction, fixed for the whole run
    max_id = max(int(ids.max()) for ids, _ in sets) + 1
    write_heavy = rng.random(max_id) < wl.write_heavy_fraction

    per_phase = [wl.n_accesses // wl.n_phases] * wl.n_phases
    per_phase[-1] += wl.n_accesses - sum(per_phase)
    if wl.tail_accesses:
        per_phase.append(wl.tail_accesses)
    shifts = sorted(wl.shift_phases)

    cols = []
    next_vpn = wl.vaddr_base // PAGE_SIZE
    P = wl.pages_per_fti
    if wl.page_zipf > 0:
        w = 1.0 / np.arange(1, P + 1) ** wl.page_zipf
        page_p = w / w.sum()
    else:
        page_p = None
    for phase, n in enumerate(per_phase):
        seg = sum(1 for s in shifts if phase >= s)
        ids, hot = sets[seg]
        F = len(ids)
        vpn0 = next_vpn
        next_vpn += F * P
        if n == 0:
            continue
        hot_idx = np.flatnonzero(hot)
        cold_idx = np.flatnonzero(~hot)
        if len(hot_idx) == 0 or len(cold_idx) == 0:
            f_local = rng.integers(0, F, size=n)
        else:
            pick_hot = rng.random(n) < wl.hot_access_share
            f_local = np.where(pick_hot, hot_idx[rng.integers(0, len(hot_idx), size=n)],
                               cold_idx[rng.integers(0, len(cold_idx), size=n)])
        if page_p is None:
            pg = rng.integers(0, P, size=n)
        else:
            pg = rng.choice(P, size=n, p=page_p)
        fti = ids[f_local]
        p_write = np.where(write_heavy[fti], wl.rw_bias, 1.0 - wl.rw_bias)
        is_write = rng.random(n) < p_write
        line = rng.integers(0, PAGE_SIZE // LINE_SIZE, size=n)
        vpn = vpn0 + f_local * P + pg
        vaddr = vpn.astype(np.uint64) * np.uint64(PAGE_SIZE) + line.astype(np.uint64) * np.uint64(LINE_SIZE)
        start = phase * wl.phase_length
        span = wl.phase_length if phase < wl.n_phases else max(1, wl.phase_length // 4)
        instr = start + (np.arange(n, dtype=np.uint64) * np.uint64(span)) // np.uint64(n)
        pc = wl.pc_base + 0x40 * fti.astype(np.uint64)
        cols.append((instr, pc, is_write, vaddr))
    if not cols:
        return Trace.empty()
    return Trace(*(np.concatenate([c[i] for c in cols]) for i in range(4)))


def generate_skewed(wl: WorkloadParams = WorkloadParams()) -> Trace:
    """One FTI working set for the whole run; hot FTIs carry ``hot_access_share``."""
    if wl.shift_phases:
        wl = WorkloadParams(**{**wl.to_dict(), "shift_phases": ()})
    return _generate(wl)


def generate_phase_shift(wl: WorkloadParams) -> Trace:
    """Working set of FTIs changes at each phase in ``wl.shift_phases``.

    Consecutive working sets share exactly ``wl.overlap`` FTIs.  Defaults
    to a single shift halfway through when no shift phases are given.
    """
    if wl.n_phases < 2:
        raise ValueError("a phase-shift trace needs at least 2 phases")
    shifts = wl.shift_phases or (wl.n_phases // 2,)
    if any(not 0 < s < wl.n_phases for s in shifts):
        raise ValueError("shift phases must lie strictly inside the run")
    return _generate(WorkloadParams(**{**wl.to_dict(), "shift_phases": tuple(shifts)}))


def first_touch_pcs(trace: Trace) -> dict:
    """Map vpn -> pc of the access that first touched it (independent recount helper)."""
    out = {}
    for r in trace:
        out.setdefault(r.vpn, r.pc)
    return out

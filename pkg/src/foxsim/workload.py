"""Trace format, parser and seeded synthetic workload generators.

Grammar, one event per line (``#`` starts a comment)::

    R <abs-path> <uid> <gid> <flag2bit>     register a file
    D <abs-path>                            mark a directory as monitored
    M <pid> <abs-path> <len> <S|P>          dax-mmap, shared or private
    A <pid> <R|W> <hex-vaddr> <size>        load/store
    X <pid>                                 process exit

Each process maps files back to back starting at virtual address 0, so the
first mapping of a pid covers ``[0, len)``.
"""

from __future__ import annotations

import hashlib
import io
import random
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Union

from .address import BLOCK_SIZE, MonitorFlag, OpKind
from .errors import InvalidArgument, ParseError


class RegisterFile(NamedTuple):
    path: str
    uid: int
    gid: int
    flag: int
    code = "R"

    def to_line(self) -> str:
        return f"R {self.path} {self.uid} {self.gid} {self.flag:02b}"


class SetDir(NamedTuple):
    path: str
    code = "D"

    def to_line(self) -> str:
        return f"D {self.path}"


class Mmap(NamedTuple):
    pid: int
    path: str
    length: int
    shared: bool = True
    code = "M"

    def to_line(self) -> str:
        return f"M {self.pid} {self.path} {self.length} {'S' if self.shared else 'P'}"


class Access(NamedTuple):
    pid: int
    op: int
    vaddr: int
    size: int = BLOCK_SIZE
    code = "A"

    def to_line(self) -> str:
        return f"A {self.pid} {'W' if self.op else 'R'} {self.vaddr:#x} {self.size}"


class Exit(NamedTuple):
    pid: int
    code = "X"

    def to_line(self) -> str:
        return f"X {self.pid}"


TraceEvent = Union[RegisterFile, SetDir, Mmap, Access, Exit]

_ARITY = {"R": 4, "D": 1, "M": 4, "A": 4, "X": 1}
_FLAG_RE = re.compile(r"[01]{2}")


def _fields_with_columns(text: str):
    return [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", text)]


def _int(tok, col, lineno, what, base=10, limit=None):
    try:
        value = int(tok, base)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", lineno, col) from None
    if value < 0 or (limit is not None and value >= limit):
        raise ParseError(f"{what} {tok!r} out of range", lineno, col)
    return value


def _path(tok, col, lineno):
    if not tok.startswith("/"):
        raise ParseError(f"path must be absolute: {tok!r}", lineno, col)
    return tok


def parse_line(text: str, lineno: int = 1) -> Optional[TraceEvent]:
    body = text.split("#", 1)[0]
    toks = _fields_with_columns(body)
    if not toks:
        return None
    (code, ccol), args = toks[0], toks[1:]
    if code not in _ARITY:
        raise ParseError(f"unknown event {code!r}", lineno, ccol)
    if len(args) != _ARITY[code]:
        col = args[_ARITY[code]][1] if len(args) > _ARITY[code] else len(body.rstrip()) + 1
        raise ParseError(f"{code} takes {_ARITY[code]} fields, got {len(args)}", lineno, col)
    if code == "A":
        (pid, pc), (op, oc), (vaddr, vc), (size, sc) = args
        if op not in ("R", "W"):
            raise ParseError(f"op must be R or W, got {op!r}", lineno, oc)
        if not vaddr.lower().startswith("0x"):
            raise ParseError(f"vaddr must be hex (0x...), got {vaddr!r}", lineno, vc)
        size_v = _int(size, sc, lineno, "size")
        if size_v == 0:
            raise ParseError("size must be positive", lineno, sc)
        return Access(_int(pid, pc, lineno, "pid", limit=1 << 16),
                      OpKind.WRITE if op == "W" else OpKind.READ,
                      _int(vaddr, vc, lineno, "vaddr", 16), size_v)
    if code == "M":
        (pid, pc), (path, pac), (length, lc), (mode, mc) = args
        if mode not in ("S", "P"):
            raise ParseError(f"mapping mode must be S or P, got {mode!r}", lineno, mc)
        length_v = _int(length, lc, lineno, "length")
        if length_v == 0:
            raise ParseError("length must be positive", lineno, lc)
        return Mmap(_int(pid, pc, lineno, "pid", limit=1 << 16), _path(path, pac, lineno),
                    length_v, mode == "S")
    if code == "X":
        (pid, pc), = args
        return Exit(_int(pid, pc, lineno, "pid", limit=1 << 16))
    if code == "D":
        (path, pac), = args
        return SetDir(_path(path, pac, lineno))
    (path, pac), (uid, uc), (gid, gc), (flag, fc) = args
    if not _FLAG_RE.fullmatch(flag):
        raise ParseError(f"flag must be two bits (00/01/10/11), got {flag!r}", lineno, fc)
    return RegisterFile(_path(path, pac, lineno), _int(uid, uc, lineno, "uid", limit=1 << 32),
                        _int(gid, gc, lineno, "gid", limit=1 << 31), int(flag, 2))


def parse_trace(stream) -> list[TraceEvent]:
    """Parse trace text (a string or an iterable of lines)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    events = []
    for lineno, line in enumerate(stream, 1):
        ev = parse_line(line, lineno)
        if ev is not None:
            events.append(ev)
    return events


def format_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(ev.to_line() + "\n" for ev in events)


def trace_digest(events) -> str:
    return hashlib.sha256(format_trace(events).encode()).hexdigest()


# -- generators -------------------------------------------------------------

KINDS = ("daxbench", "swaparray_like", "hashtable_like", "spec_like")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "daxbench"
    file_size: int = 4 << 20
    rw_ratio: float = 0.5  # fraction of reads; daxbench and spec_like only
    locality: float = 0.0  # probability the next item is adjacent to the last
    event_count: int = 10_000
    seed: int = 0
    pid: int = 1
    path: Optional[str] = None
    uid: int = 1000
    gid: int = 100
    flag: int = MonitorFlag.READ_WRITE
    exit: bool = True

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown generator kind {self.kind!r}")
        if not 0.0 <= self.rw_ratio <= 1.0:
            raise InvalidArgument("rw_ratio must be in [0, 1]")
        if not 0.0 <= self.locality <= 1.0:
            raise InvalidArgument("locality must be in [0, 1]")
        if self.file_size < 8 * BLOCK_SIZE or self.file_size % BLOCK_SIZE:
            raise InvalidArgument("file_size must be a multiple of 64 and at least 512")
        if self.event_count < 0:
            raise InvalidArgument("event_count must be non-negative")

    def resolved_path(self) -> str:
        if self.path:
            return self.path
        if self.kind == "spec_like":
            return f"/home/spec/app{self.pid}.heap"
        return f"/nvm/{self.kind}.{self.pid}.pool"


class _Cursor:
    """Item picker: adjacent to the previous item with probability `locality`."""

    def __init__(self, rng: random.Random, items: int, locality: float):
        self.rng = rng
        self.items = items
        self.locality = locality
        self.last = rng.randrange(items)

    def next(self) -> int:
        rng = self.rng
        if self.locality and rng.random() < self.locality:
            self.last = (self.last + 1) % self.items
        else:
            self.last = rng.randrange(self.items)
        return self.last


def _uniform(spec, rng, out):
    pid, ratio = spec.pid, spec.rw_ratio
    cur = _Cursor(rng, spec.file_size // BLOCK_SIZE, spec.locality)
    for _ in range(spec.event_count):
        op = OpKind.READ if rng.random() < ratio else OpKind.WRITE
        out.append(Access(pid, op, cur.next() * BLOCK_SIZE, BLOCK_SIZE))


def _swaparray(spec, rng, out):
    # 30% inserts (one store), 70% swaps (two loads then two stores).
    pid, n = spec.pid, spec.event_count
    items = spec.file_size // BLOCK_SIZE
    cur = _Cursor(rng, items, spec.locality)
    start = len(out)
    while len(out) - start < n:
        i = cur.next() * BLOCK_SIZE
        if rng.random() < 0.3:
            ops = [(OpKind.WRITE, i)]
        else:
            j = rng.randrange(items) * BLOCK_SIZE
            ops = [(OpKind.READ, i), (OpKind.READ, j), (OpKind.WRITE, i), (OpKind.WRITE, j)]
        for op, addr in ops:
            if len(out) - start >= n:
                break
            out.append(Access(pid, op, addr, BLOCK_SIZE))


def _hashtable(spec, rng, out):
    # Bucket array in the first eighth of the file, nodes scattered over the rest.
    pid, n = spec.pid, spec.event_count
    buckets = max(1, spec.file_size // 8 // 8)
    node_base = spec.file_size // 8
    nodes = (spec.file_size - node_base) // BLOCK_SIZE
    cur = _Cursor(rng, buckets, spec.locality)
    start = len(out)
    while len(out) - start < n:
        bucket = cur.next() * 8
        node = node_base + rng.randrange(nodes) * BLOCK_SIZE
        r = rng.random()
        if r < 0.5:
            ops = [(OpKind.READ, bucket, 8)]
            for _ in range(rng.randint(1, 3)):
                ops.append((OpKind.READ, node, 16))
                node = node_base + rng.randrange(nodes) * BLOCK_SIZE
        elif r < 0.75:
            ops = [(OpKind.READ, bucket, 8), (OpKind.WRITE, node, BLOCK_SIZE),
                   (OpKind.WRITE, bucket, 8)]
        else:
            ops = [(OpKind.READ, bucket, 8), (OpKind.READ, node, 16), (OpKind.WRITE, bucket, 8)]
        for op, addr, size in ops:
            if len(out) - start >= n:
                break
            out.append(Access(pid, op, addr, size))


_BODIES = {
    "daxbench": _uniform,
    "spec_like": _uniform,
    "swaparray_like": _swaparray,
    "hashtable_like": _hashtable,
}


def generate(spec: GeneratorSpec) -> list[TraceEvent]:
    """Deterministic trace for ``spec``: register, mmap, accesses, exit.

    spec_like files live outside the DAX mount, so they are never placed in
    the persistent-memory window.
    """
    spec.validate()
    rng = random.Random(f"{spec.kind}:{spec.seed}")
    path = spec.resolved_path()
    out: list[TraceEvent] = [
        RegisterFile(path, spec.uid, spec.gid, int(spec.flag)),
        Mmap(spec.pid, path, spec.file_size, True),
    ]
    _BODIES[spec.kind](spec, rng, out)
    if spec.exit:
        out.append(Exit(spec.pid))
    return out


def event_pids(events) -> set:
    return {ev.pid for ev in events if ev.code in "MAX"}


def mix(traces: list, seed: int = 0, max_burst: int = 4) -> list[TraceEvent]:
    """Interleave traces round-robin with random burst lengths.

    Each input keeps its internal order.  Identical R/D directives appearing in
    several inputs are emitted once.
    """
    seen: set = set()
    for t in traces:
        pids = event_pids(t)
        if pids & seen:
            raise InvalidArgument(f"pid collision between mixed traces: {sorted(pids & seen)}")
        seen |= pids
    rng = random.Random(f"mix:{seed}")
    cursors = [0] * len(traces)
    active = [i for i, t in enumerate(traces) if t]
    directives: set = set()
    out: list[TraceEvent] = []
    turn = 0
    while active:
        turn %= len(active)
        i = active[turn]
        trace = traces[i]
        burst = rng.randint(1, max_burst)
        pos = cursors[i]
        end = min(pos + burst, len(trace))
        for ev in trace[pos:end]:
            if ev.code in "RD":
                if ev in directives:
                    continue
                directives.add(ev)
            out.append(ev)
        cursors[i] = end
        if end >= len(trace):
            active.pop(turn)
        else:
            turn += 1
    return out


MONITORED_DIR = "/nvm/secret"
PUBLIC_DIR = "/nvm/public"

# Kinds for each two-application mix, plus which member (by
# position) lives under the monitored directory.
MIX_PRESETS = {
    1: (("spec_like", "swaparray_like"), ()),
    2: (("hashtable_like", "hashtable_like"), ()),
    3: (("spec_like", "spec_like"), ()),
    4: (("daxbench", "swaparray_like"), ()),
    5: (("hashtable_like", "hashtable_like"), (0,)),
    6: (("swaparray_like", "hashtable_like"), (1,)),
    7: (("swaparray_like", "hashtable_like"), (0,)),
    8: (("spec_like", "daxbench"), ()),
}


def mix_preset(number: int, event_count: int = 10_000, seed: int = 0,
               file_size: int = 4 << 20, locality: float = 0.0,
               rw_ratio: float = 0.5) -> list[TraceEvent]:
    """Two-application mix shaped like MIX<number>; pids are 1 and 2."""
    try:
        kinds, monitored = MIX_PRESETS[number]
    except KeyError:
        raise InvalidArgument(f"no mix preset {number}") from None
    traces = []
    for pos, kind in enumerate(kinds):
        pid = pos + 1
        path = None
        if kind != "spec_like":
            where = MONITORED_DIR if pos in monitored else PUBLIC_DIR
            path = f"{where}/{kind}.{pid}.pool"
        # Mix 2 pairs an intensive member with a sparse, high-locality one.
        loc = 0.9 if number == 2 and pos == 0 else locality
        spec = GeneratorSpec(kind=kind, file_size=file_size, rw_ratio=rw_ratio, locality=loc,
                             event_count=event_count, seed=seed * 31 + pos, pid=pid, path=path)
        traces.append(generate(spec))
    return mix(traces, seed)

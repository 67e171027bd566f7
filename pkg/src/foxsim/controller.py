"""Memory-controller model.

Every request goes through the Metadata Processing Module (counter fetch
plus metabit/flag check against the Open Monitor File Table).  Requests that
must be audited are queued on the pre-monitoring queue and committed by the
Monitor Module, which does the read-before-write of the 64-byte log block
through the monitor cache and then writes the record.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

from .address import (
    DEVICE_MASK,
    METABIT_MASK,
    METABIT_SHIFT,
    NUM_MONITOR_SLOTS,
    PAGE_SHIFT,
    MemoryRequest,
    OpKind,
)
from .cache import CacheModel
from .errors import CodecError, InvalidArgument, ResourceExhausted
from .logstore import MonitorRecord
from .schemes import CacheConfig

OMFT_ENTRY_SIZE = 17
_OMFT_ENTRY = struct.Struct("<BIIIHH")
assert _OMFT_ENTRY.size == OMFT_ENTRY_SIZE

# One 64-byte counter block covers a 4 KiB page.
COUNTER_BLOCK = 64

DATA, MONITOR = 0, 1


class OmftEntry(NamedTuple):
    valid: bool
    inode: int
    uid: int
    gid: int
    flag: int
    pid: int
    dir_id: int = 0

    def pack(self) -> bytes:
        head = (1 if self.valid else 0) | ((self.flag & 0b11) << 1)
        return _OMFT_ENTRY.pack(head, self.inode, self.uid, self.gid & 0x7FFF_FFFF,
                                self.pid, self.dir_id)

    @classmethod
    def unpack(cls, data: bytes) -> "OmftEntry":
        if len(data) != OMFT_ENTRY_SIZE:
            raise CodecError(f"OMFT entry must be {OMFT_ENTRY_SIZE} bytes")
        head, inode, uid, gid, pid, dir_id = _OMFT_ENTRY.unpack(data)
        return cls(bool(head & 1), inode, uid, gid, (head >> 1) & 0b11, pid, dir_id)


class Omft:
    """512 direct-mapped slots indexed by metabit value; slot 0 stays invalid."""

    def __init__(self):
        self.slots: list[Optional[OmftEntry]] = [None] * NUM_MONITOR_SLOTS

    def install(self, index: int, entry: OmftEntry) -> None:
        if not 1 <= index < NUM_MONITOR_SLOTS:
            raise InvalidArgument(f"OMFT index {index} outside 1..{NUM_MONITOR_SLOTS - 1}")
        self.slots[index] = entry._replace(valid=True)

    def evict(self, index: int) -> None:
        if 0 <= index < NUM_MONITOR_SLOTS:
            self.slots[index] = None

    def lookup(self, index: int) -> Optional[OmftEntry]:
        return self.slots[index]

    def occupancy(self) -> int:
        return sum(1 for s in self.slots if s is not None)

    def dump(self) -> bytes:
        empty = bytes(OMFT_ENTRY_SIZE)
        return b"".join(e.pack() if e is not None else empty for e in self.slots)

    @classmethod
    def load(cls, data: bytes) -> "Omft":
        if len(data) != NUM_MONITOR_SLOTS * OMFT_ENTRY_SIZE:
            raise CodecError(f"OMFT dump must be {NUM_MONITOR_SLOTS * OMFT_ENTRY_SIZE} bytes")
        table = cls()
        for i in range(1, NUM_MONITOR_SLOTS):
            entry = OmftEntry.unpack(data[i * OMFT_ENTRY_SIZE:(i + 1) * OMFT_ENTRY_SIZE])
            if entry.valid:
                table.slots[i] = entry
        return table


class PreMonitorRequest(NamedTuple):
    address: int
    op: int
    entry: OmftEntry
    logical_time: int


@dataclass
class TrafficCounters:
    data_reads: int = 0
    data_writes: int = 0
    counter_reads: int = 0
    counter_writes: int = 0
    monitor_reads: int = 0
    monitor_writes: int = 0
    mc_hits: int = 0
    mc_misses: int = 0
    cc_hits: int = 0
    cc_misses: int = 0
    # Valid OMFT slot whose pid disagrees with the request (stale metabits).
    stale_lookups: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def ordering_check(stream) -> bool:
    """True iff each monitor commit follows the data request with the same
    logical time and monitor commits appear in strictly increasing time."""
    completed = set()
    last = -1
    for kind, t in stream:
        if kind == DATA:
            completed.add(t)
        else:
            if t not in completed or t <= last:
                return False
            last = t
    return True


class MemoryController:
    def __init__(self, log_store, caches=None, strict_ordering: bool = False,
                 keep_records: bool = True):
        caches = caches if caches is not None else CacheConfig()
        self.log = log_store
        self.omft = Omft()
        self.counter_cache = CacheModel(caches.counter_cache_bytes, caches.counter_cache_ways)
        self.monitor_cache = CacheModel(caches.monitor_cache_bytes, caches.monitor_cache_ways)
        self.counters = TrafficCounters()
        self.paq: deque = deque()
        self.committed: Optional[list] = [] if keep_records else None
        self.stream: Optional[list] = [] if strict_ordering else None
        self.backups: list = []
        self._last_time = -1

    # -- OMFT messages -----------------------------------------------------

    def omft_install(self, index: int, entry: OmftEntry) -> None:
        self.omft.install(index, entry)

    def omft_evict(self, index: int) -> None:
        self.omft.evict(index)

    def deliver(self, message) -> None:
        if hasattr(message, "entry"):
            self.omft.install(message.index, message.entry)
        else:
            self.omft.evict(message.index)

    # -- phase 1 -----------------------------------------------------------

    def counter_fetch(self, device_address: int, op: int) -> bool:
        c = self.counters
        cache = self.counter_cache
        hit = cache.access((device_address >> PAGE_SHIFT) * COUNTER_BLOCK, op == OpKind.WRITE)
        if hit:
            c.cc_hits += 1
        else:
            c.cc_misses += 1
            c.counter_reads += 1
            if cache.evicted_dirty:
                c.counter_writes += 1
        return hit

    def mpm_process(self, req: MemoryRequest) -> Optional[PreMonitorRequest]:
        address, op, pid, t = req
        self.counter_fetch(address & DEVICE_MASK, op)
        index = (address >> METABIT_SHIFT) & METABIT_MASK
        if not index:
            return None
        entry = self.omft.slots[index]
        if entry is None:
            return None
        if entry.pid != pid:
            self.counters.stale_lookups += 1
            return None
        if not entry.flag & (2 if op else 1):
            return None
        return PreMonitorRequest(address, op, entry, t)

    def issue(self, req: MemoryRequest) -> list:
        """Serve one data request and commit any monitor record it triggers."""
        t = req.logical_time
        if t <= self._last_time:
            raise InvalidArgument(f"logical time {t} not after {self._last_time}")
        self._last_time = t
        if req.op:
            self.counters.data_writes += 1
        else:
            self.counters.data_reads += 1
        pre = self.mpm_process(req)
        if self.stream is not None:
            self.stream.append((DATA, t))
        if pre is None:
            return []
        self.paq.append(pre)
        return self.drain()

    # -- phase 2 -----------------------------------------------------------

    def drain(self) -> list:
        out = []
        while self.paq:
            out.append(self.mm_commit(self.paq.popleft()))
        return out

    def mm_commit(self, pre: PreMonitorRequest) -> MonitorRecord:
        c = self.counters
        device = pre.address & DEVICE_MASK
        try:
            log_addr = self.log.locate(device)
        except InvalidArgument as exc:
            raise ResourceExhausted(str(exc)) from None
        if self.monitor_cache.access(log_addr):
            c.mc_hits += 1
        else:
            c.mc_misses += 1
            c.monitor_reads += 1
            self.counter_fetch(log_addr, OpKind.READ)
        e = pre.entry
        record = MonitorRecord(device & ~0x3F, e.uid, e.gid, pre.op, pre.logical_time,
                               e.inode, e.dir_id, e.pid)
        backup = self.log.store(record, device)
        if backup is not None:
            self.backups.append(backup)
        c.monitor_writes += 1
        self.counter_fetch(log_addr, OpKind.WRITE)
        if self.committed is not None:
            self.committed.append(record)
        if self.stream is not None:
            self.stream.append((MONITOR, pre.logical_time))
        return record

    def finish(self) -> None:
        """End of run: write back dirty counter blocks."""
        self.counters.counter_writes += self.counter_cache.flush()

    def ordering_ok(self) -> bool:
        if self.stream is None:
            raise InvalidArgument("ordering stream not recorded (strict_ordering off)")
        return ordering_check(self.stream)

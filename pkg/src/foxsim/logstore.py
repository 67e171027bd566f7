"""Monitor-record codec, the FOXL audit-log file, and the two log backends.

Record layout (32 bytes, little-endian)::

    offset  size  field
         0     8  block address
         8     4  uid
        12     4  gid (bits 0-30) | op (bit 31, 1 = write)
        16     8  timestamp (logical time)
        24     4  inode
        28     2  directory id
        30     2  pid

Records written by the kernel for pairs that overflowed the map table carry
``KERNEL_EVENT_FLAG`` in the inode field (plus ``EXIT_EVENT_FLAG`` for
exit records) and block address 0.
"""

from __future__ import annotations

import os
import struct
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

from .address import BLOCK_SHIFT
from .errors import CodecError, InvalidArgument, ResourceExhausted, SinkError
from .schemes import RECORD_SIZE, StorageConfig, StorageKind

_RECORD = struct.Struct("<QIIQIHH")
assert _RECORD.size == RECORD_SIZE

OP_BIT = 1 << 31
GID_MASK = OP_BIT - 1
KERNEL_EVENT_FLAG = 1 << 31
EXIT_EVENT_FLAG = 1 << 30
MAX_INODE = EXIT_EVENT_FLAG - 1

FOXL_MAGIC = b"FOXL"
FOXL_VERSION = 1
FOXL_HEADER = FOXL_MAGIC + bytes([FOXL_VERSION])


class MonitorRecord(NamedTuple):
    block_address: int
    uid: int
    gid: int
    op: int
    timestamp: int
    inode: int
    dir_id: int = 0
    pid: int = 0

    @property
    def is_kernel_event(self) -> bool:
        return bool(self.inode & KERNEL_EVENT_FLAG)

    @property
    def is_exit(self) -> bool:
        return self.is_kernel_event and bool(self.inode & EXIT_EVENT_FLAG)

    @property
    def file_inode(self) -> int:
        return self.inode & MAX_INODE if self.is_kernel_event else self.inode


def encode_record(rec: MonitorRecord) -> bytes:
    if not 0 <= rec.gid <= GID_MASK:
        raise CodecError(f"gid {rec.gid} does not fit in 31 bits")
    try:
        return _RECORD.pack(rec.block_address, rec.uid, rec.gid | (OP_BIT if rec.op else 0),
                            rec.timestamp, rec.inode, rec.dir_id, rec.pid)
    except struct.error as exc:
        raise CodecError(str(exc)) from None


def decode_record(data: bytes) -> MonitorRecord:
    if len(data) != RECORD_SIZE:
        raise CodecError(f"record must be {RECORD_SIZE} bytes, got {len(data)}")
    addr, uid, word, ts, inode, dir_id, pid = _RECORD.unpack(data)
    return MonitorRecord(addr, uid, word & GID_MASK, word >> 31, ts, inode, dir_id, pid)


def encode_log(records: Iterable[MonitorRecord]) -> bytes:
    return FOXL_HEADER + b"".join(encode_record(r) for r in records)


def decode_log(data: bytes) -> list[MonitorRecord]:
    if data[:4] != FOXL_MAGIC:
        raise CodecError("not a FOXL file (bad magic)")
    if len(data) < len(FOXL_HEADER):
        raise CodecError("truncated FOXL header")
    if data[4] != FOXL_VERSION:
        raise CodecError(f"unsupported FOXL version {data[4]}")
    body = memoryview(data)[len(FOXL_HEADER):]
    if len(body) % RECORD_SIZE:
        raise CodecError(f"FOXL body length {len(body)} is not a multiple of {RECORD_SIZE}")
    return [decode_record(bytes(body[i:i + RECORD_SIZE])) for i in range(0, len(body), RECORD_SIZE)]


def read_log(path) -> list[MonitorRecord]:
    with open(path, "rb") as fh:
        return decode_log(fh.read())


def write_log(path, records: Iterable[MonitorRecord]) -> None:
    """Write a FOXL file atomically (temp file + rename)."""
    data = encode_log(records)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class MemorySink:
    """Backup sink that keeps flushed records in a list."""

    def __init__(self):
        self.records: list[MonitorRecord] = []

    def write(self, records):
        self.records.extend(records)


class FileSink:
    """Append-only FOXL file; the header is written on first use."""

    def __init__(self, path):
        self.path = path
        self.records_written = 0
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "wb") as fh:
                fh.write(FOXL_HEADER)

    def write(self, records):
        payload = b"".join(encode_record(r) for r in records)
        with open(self.path, "ab") as fh:
            fh.write(payload)
        self.records_written += len(records)


@dataclass(frozen=True)
class BackupEvent:
    sequence: int
    record_count: int
    first_append: int
    last_append: int


class GlobalCircularLog:
    """Shared ring of records; the write pointer wraps modulo the capacity."""

    def __init__(self, capacity: int, base: int = 0, backup_threshold: Optional[float] = 0.5,
                 sink=None):
        if capacity < 1:
            raise InvalidArgument("capacity must be at least 1")
        self.capacity = capacity
        self.base = base
        self.backup_threshold = backup_threshold
        self.sink = sink if sink is not None else MemorySink()
        self.head = 0
        self.total_appends = 0
        self.since_backup = 0
        self.backups: list[BackupEvent] = []
        self._ring: deque = deque(maxlen=capacity)

    def locate(self, device_address: int = 0) -> int:
        return self.base + self.head * RECORD_SIZE

    def append(self, record: MonitorRecord) -> int:
        index = self.head
        self._ring.append(record)
        self.head = (index + 1) % self.capacity
        self.total_appends += 1
        self.since_backup += 1
        return index

    def store(self, record: MonitorRecord, device_address: int = 0) -> Optional[BackupEvent]:
        self.append(record)
        return self.maybe_trigger_backup()

    def live(self) -> list[MonitorRecord]:
        """Records still in the ring, oldest first."""
        return list(self._ring)

    def pending(self) -> list[MonitorRecord]:
        """Live records that no backup has flushed yet."""
        n = min(self.since_backup, len(self._ring))
        if n == 0:
            return []
        return list(self._ring)[-n:]

    def slot(self, index: int) -> MonitorRecord:
        """Record stored at ring position ``index``."""
        if not 0 <= index < self.capacity:
            raise InvalidArgument(f"slot {index} outside ring of {self.capacity}")
        n = len(self._ring)
        if n < self.capacity:
            if index >= n:
                raise InvalidArgument(f"slot {index} not written yet")
            return self._ring[index]
        # Full ring: the oldest record sits at head.
        return self._ring[(index - self.head) % self.capacity]

    def maybe_trigger_backup(self) -> Optional[BackupEvent]:
        if self.backup_threshold is None:
            return None
        if self.since_backup < self.backup_threshold * self.capacity:
            return None
        return self.backup()

    def backup(self) -> Optional[BackupEvent]:
        records = self.pending()
        if not records and not self.since_backup:
            return None
        try:
            self.sink.write(records)
        except OSError as exc:
            raise SinkError(f"backup sink failed: {exc}") from exc
        event = BackupEvent(len(self.backups), len(records),
                            self.total_appends - self.since_backup, self.total_appends - 1)
        self.backups.append(event)
        self.since_backup = 0
        return event

    def flushed(self) -> list[MonitorRecord]:
        return list(getattr(self.sink, "records", []))

    def history(self) -> list[MonitorRecord]:
        """Everything an auditor can recover: flushed sink plus unflushed ring."""
        return self.flushed() + self.pending()


class FixedLocationLog:
    """One 32-byte log slot per 64-byte data block; each slot keeps only the
    most recent access to its block."""

    def __init__(self, data_size: int, base: Optional[int] = None):
        if data_size <= 0:
            raise InvalidArgument("data_size must be positive")
        self.data_size = data_size
        self.base = data_size if base is None else base
        if self.base < data_size:
            raise InvalidArgument("log region overlaps the data region")
        self.slots: dict[int, MonitorRecord] = {}
        self.total_appends = 0

    def locate(self, device_address: int) -> int:
        return log_address_fixed(device_address, self.base, self.data_size)

    def store(self, record: MonitorRecord, device_address: int) -> None:
        try:
            addr = self.locate(device_address)
        except InvalidArgument as exc:
            raise ResourceExhausted(f"no fixed log slot: {exc}") from None
        self.slots[addr] = record
        self.total_appends += 1
        return None

    def live(self) -> list[MonitorRecord]:
        return [self.slots[a] for a in sorted(self.slots)]

    def history(self) -> list[MonitorRecord]:
        return self.live()


def log_address_fixed(device_address: int, base: int, data_size: int) -> int:
    if not 0 <= device_address < data_size:
        raise InvalidArgument(f"address {device_address:#x} outside data region")
    return base + (device_address >> BLOCK_SHIFT) * RECORD_SIZE


class LogStore:
    """The active backend plus a small ring for the kernel's overflow records.

    The kernel ring always uses circular semantics, even when monitor records
    go to fixed locations.
    """

    def __init__(self, config: StorageConfig, sink=None, kernel_sink=None):
        config.validate()
        self.config = config
        base = config.memory_size
        if config.kind is StorageKind.FIXED:
            self.backend = FixedLocationLog(config.memory_size, base)
            kernel_base = base + config.memory_size // 2
        else:
            self.backend = GlobalCircularLog(config.capacity, base, config.backup_threshold, sink)
            kernel_base = base + config.capacity * RECORD_SIZE
        if kernel_sink is None and config.kind is StorageKind.CIRCULAR:
            kernel_ring = self.backend
        else:
            kernel_ring = GlobalCircularLog(config.capacity, kernel_base,
                                            config.backup_threshold, kernel_sink)
        self.kernel_ring = kernel_ring

    def locate(self, device_address: int) -> int:
        return self.backend.locate(device_address)

    def store(self, record: MonitorRecord, device_address: int):
        return self.backend.store(record, device_address)

    def store_kernel(self, record: MonitorRecord):
        return self.kernel_ring.store(record)

    def audit_log(self) -> list[MonitorRecord]:
        """Recoverable records ordered by timestamp."""
        records = self.backend.history()
        if self.kernel_ring is not self.backend:
            records = records + self.kernel_ring.history()
        return sorted(records, key=lambda r: r.timestamp)

"""Simulated kernel side: DAX mmap bookkeeping, fault-time address tagging,
and the software tables that feed the controller's open-monitor-file table.

The kernel owns three views of every monitored (pid, inode) pair:

* the Primary Map Table, 512 slots whose index doubles as the metabit value
  (slot 0 is never handed out),
* the Monitor Process Table, pid -> slots, used to evict on exit(),
* backup tables for pairs that did not fit into the PMT.

Install/evict messages for the controller are queued on ``outbox`` and must
be drained before the next memory request is issued.
"""

from __future__ import annotations

import heapq
import posixpath
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .address import (
    NUM_MONITOR_SLOTS,
    PAGE_SHIFT,
    PAGE_SIZE,
    MonitorFlag,
    OpKind,
    encode_metabits,
)
from .controller import OmftEntry
from .errors import FaultError, InvalidArgument, ResourceExhausted
from .logstore import EXIT_EVENT_FLAG, KERNEL_EVENT_FLAG, MAX_INODE, MonitorRecord
from .schemes import NVM_WINDOW, GiB, Scheme, SchemeConfig

DAX_MOUNTS = ("/nvm",)
# Files outside a DAX mount live in ordinary memory below the NVM window.
CONVENTIONAL_BASE = 1 * GiB
MMAP_BASE = 0
MAX_PID = 0xFFFF
MAX_DIR_ID = 0xFFFF


@dataclass
class FileMeta:
    inode: int
    path: str
    monitor_flag: MonitorFlag
    uid: int
    gid: int
    dir_id: int = 0


class PmtKey(NamedTuple):
    pid: int
    inode: int


@dataclass
class MmapRegion:
    pid: int
    inode: int
    vbase: int
    length: int
    device_base: int
    shared: bool

    def covers(self, vaddr: int) -> bool:
        return self.vbase <= vaddr < self.vbase + self.length


@dataclass
class ExitSummary:
    pid: int
    freed_slots: list = field(default_factory=list)
    backup_keys: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.freed_slots or self.backup_keys)


class OmftInstall(NamedTuple):
    index: int
    entry: OmftEntry


class OmftEvict(NamedTuple):
    index: int


def _normalize(path: str) -> str:
    if not path.startswith("/"):
        raise InvalidArgument(f"path must be absolute: {path!r}")
    return posixpath.normpath(path)


def path_under(path: str, directory: str) -> bool:
    """Component-wise prefix test: ``/a/b`` is under ``/a`` but not ``/a/bc``."""
    if directory == "/":
        return True
    return path == directory or path.startswith(directory + "/")


class Kernel:
    def __init__(self, scheme: Optional[SchemeConfig] = None, dax_mounts=DAX_MOUNTS,
                 nvm_region=NVM_WINDOW):
        self.scheme = scheme if scheme is not None else SchemeConfig()
        self.dax_mounts = tuple(_normalize(m) for m in dax_mounts)

        self.files: dict[str, FileMeta] = {}
        self.inodes: dict[int, FileMeta] = {}
        self.directories: dict[str, int] = {}

        self.pmt: list[Optional[PmtKey]] = [None] * NUM_MONITOR_SLOTS
        self.pmt_index: dict[PmtKey, int] = {}
        self.mpt: dict[int, list[int]] = {}
        self._free_slots = list(range(1, NUM_MONITOR_SLOTS))
        heapq.heapify(self._free_slots)
        self.backup_map: dict[PmtKey, int] = {}
        self.backup_mpt: dict[int, list[PmtKey]] = {}

        self.regions: dict[int, list[MmapRegion]] = {}
        self.page_tables: dict[int, dict[int, int]] = {}
        self._next_vaddr: dict[int, int] = {}
        self.file_pages: dict[int, list[int]] = {}

        # Placement is scheme-independent so every scheme sees the same addresses.
        lo, hi = nvm_region
        self._nvm_next, self._nvm_end = lo, hi
        self._conv_next, self._conv_end = CONVENTIONAL_BASE, lo

        self.outbox: deque = deque()
        # mmap()/exit() records for pairs that overflowed the PMT.
        self.overflow_records: list[MonitorRecord] = []

        if self.scheme.monitored_dir:
            self.set_monitored_directory(self.scheme.monitored_dir)

    # -- namespace ---------------------------------------------------------

    def register_file(self, path: str, uid: int, gid: int, monitor_flag) -> FileMeta:
        path = _normalize(path)
        if path in self.files:
            raise InvalidArgument(f"file already registered: {path}")
        if not 0 <= uid < 2**32:
            raise InvalidArgument(f"uid out of range: {uid}")
        if not 0 <= gid < 2**31:
            raise InvalidArgument(f"gid out of range: {gid}")
        inode = len(self.files) + 1
        if inode > MAX_INODE:
            raise ResourceExhausted("inode space exhausted")
        meta = FileMeta(inode, path, MonitorFlag(monitor_flag), uid, gid,
                        self._directory_of(path))
        self.files[path] = meta
        self.inodes[inode] = meta
        return meta

    def lookup(self, path: str) -> FileMeta:
        try:
            return self.files[_normalize(path)]
        except KeyError:
            raise InvalidArgument(f"unknown file: {path}") from None

    def set_monitored_directory(self, path: str) -> int:
        path = _normalize(path)
        if path in self.directories:
            return self.directories[path]
        if len(self.directories) >= MAX_DIR_ID:
            raise ResourceExhausted("directory id space exhausted")
        dir_id = len(self.directories) + 1
        self.directories[path] = dir_id
        for meta in self.files.values():
            meta.dir_id = self._directory_of(meta.path)
        return dir_id

    def _directory_of(self, path: str) -> int:
        best, best_len = 0, -1
        for directory, dir_id in self.directories.items():
            if path_under(path, directory) and len(directory) > best_len:
                best, best_len = dir_id, len(directory)
        return best

    def on_dax_mount(self, path: str) -> bool:
        return any(path_under(path, m) for m in self.dax_mounts)

    # -- policy ------------------------------------------------------------

    def in_nvm_window(self, meta: FileMeta, window=None) -> bool:
        window = window if window is not None else self.scheme.nvm_window
        if window is None:
            return False
        pages = self.file_pages.get(meta.inode)
        if pages:
            start = pages[0]
        elif self.on_dax_mount(meta.path):
            start = self._nvm_next
        else:
            start = self._conv_next
        return window[0] <= start < window[1]

    def resolve_monitor_flag(self, meta: FileMeta, scheme: Optional[SchemeConfig] = None) -> MonitorFlag:
        scheme = scheme if scheme is not None else self.scheme
        kind = scheme.scheme
        flag = meta.monitor_flag
        if kind is Scheme.BASELINE:
            return MonitorFlag.NONE
        if kind is Scheme.DIRECTORY:
            return flag if meta.dir_id else MonitorFlag.NONE
        if kind.persist and not self.in_nvm_window(meta, scheme.nvm_window):
            return MonitorFlag.NONE
        if kind.write_only:
            flag &= MonitorFlag.WRITE
        return MonitorFlag(flag)

    # -- mmap / fault / exit -----------------------------------------------

    def _allocate_pages(self, meta: FileMeta, npages: int) -> list:
        pages = self.file_pages.setdefault(meta.inode, [])
        missing = npages - len(pages)
        if missing <= 0:
            return pages
        if self.on_dax_mount(meta.path):
            start, end = self._nvm_next, self._nvm_end
        else:
            start, end = self._conv_next, self._conv_end
        if start + missing * PAGE_SIZE > end:
            raise ResourceExhausted(f"out of device space mapping {meta.path}")
        pages.extend(range(start, start + missing * PAGE_SIZE, PAGE_SIZE))
        if self.on_dax_mount(meta.path):
            self._nvm_next = start + missing * PAGE_SIZE
        else:
            self._conv_next = start + missing * PAGE_SIZE
        return pages

    def dax_mmap(self, pid: int, meta: FileMeta, length: int, shared: bool = True,
                 time: int = 0) -> MmapRegion:
        if not 0 <= pid <= MAX_PID:
            raise InvalidArgument(f"pid out of range: {pid}")
        if length <= 0:
            raise InvalidArgument("mmap length must be positive")
        regions = self.regions.setdefault(pid, [])
        if any(r.inode == meta.inode for r in regions):
            raise InvalidArgument(f"pid {pid} already maps inode {meta.inode}")
        npages = -(-length // PAGE_SIZE)
        pages = self._allocate_pages(meta, npages)
        vbase = self._next_vaddr.get(pid, MMAP_BASE)
        region = MmapRegion(pid, meta.inode, vbase, npages * PAGE_SIZE, pages[0], shared)
        regions.append(region)
        self._next_vaddr[pid] = vbase + npages * PAGE_SIZE
        self.page_tables.setdefault(pid, {})

        flag = self.resolve_monitor_flag(meta)
        if flag:
            self.pmt_insert(pid, meta, flag, time)
        return region

    def pmt_insert(self, pid: int, meta: FileMeta, flag: MonitorFlag, time: int = 0) -> int:
        """Returns the slot, or 0 when the pair went to the backup tables."""
        key = PmtKey(pid, meta.inode)
        if key in self.pmt_index:
            return self.pmt_index[key]
        if key in self.backup_map:
            return 0
        if not self._free_slots:
            self.backup_map[key] = time
            self.backup_mpt.setdefault(pid, []).append(key)
            self.overflow_records.append(self._kernel_record(meta, pid, time, exit_=False))
            return 0
        slot = heapq.heappop(self._free_slots)
        self.pmt[slot] = key
        self.pmt_index[key] = slot
        self.mpt.setdefault(pid, []).append(slot)
        entry = OmftEntry(True, meta.inode, meta.uid, meta.gid, int(flag), pid, meta.dir_id)
        self.outbox.append(OmftInstall(slot, entry))
        return slot

    def _kernel_record(self, meta: FileMeta, pid: int, time: int, exit_: bool) -> MonitorRecord:
        tag = KERNEL_EVENT_FLAG | (EXIT_EVENT_FLAG if exit_ else 0)
        return MonitorRecord(0, meta.uid, meta.gid, OpKind.WRITE, time, tag | meta.inode,
                             meta.dir_id, pid)

    def find_region(self, pid: int, vaddr: int) -> MmapRegion:
        for region in self.regions.get(pid, ()):
            if region.covers(vaddr):
                return region
        raise FaultError(f"pid {pid}: no mapping covers {vaddr:#x}")

    def handle_page_fault(self, pid: int, vaddr: int) -> int:
        """Tagged physical address of the page containing ``vaddr``."""
        vpage = vaddr >> PAGE_SHIFT
        table = self.page_tables.get(pid)
        if table is not None and vpage in table:
            return table[vpage]
        region = self.find_region(pid, vaddr)
        device_page = self.file_pages[region.inode][(vaddr - region.vbase) >> PAGE_SHIFT]
        slot = self.pmt_index.get(PmtKey(pid, region.inode), 0)
        tagged = encode_metabits(device_page, slot)
        self.page_tables[pid][vpage] = tagged
        return tagged

    def translate(self, pid: int, vaddr: int) -> int:
        table = self.page_tables.get(pid)
        base = table.get(vaddr >> PAGE_SHIFT) if table is not None else None
        if base is None:
            base = self.handle_page_fault(pid, vaddr)
        return base | (vaddr & (PAGE_SIZE - 1))

    def handle_exit(self, pid: int, time: int = 0) -> ExitSummary:
        summary = ExitSummary(pid)
        for slot in self.mpt.pop(pid, []):
            key = self.pmt[slot]
            self.pmt[slot] = None
            del self.pmt_index[key]
            heapq.heappush(self._free_slots, slot)
            self.outbox.append(OmftEvict(slot))
            summary.freed_slots.append(slot)
        for key in self.backup_mpt.pop(pid, []):
            del self.backup_map[key]
            self.overflow_records.append(
                self._kernel_record(self.inodes[key.inode], pid, time, exit_=True))
            summary.backup_keys.append(key)
        self.regions.pop(pid, None)
        self.page_tables.pop(pid, None)
        self._next_vaddr.pop(pid, None)
        return summary

    # -- introspection -----------------------------------------------------

    def pmt_occupancy(self) -> int:
        return len(self.pmt_index)

    def check_tables(self) -> None:
        """Raise AssertionError if PMT, MPT and backup tables disagree."""
        grouped: dict[int, list[int]] = {}
        for slot, key in enumerate(self.pmt):
            if key is None:
                continue
            assert slot != 0, "slot 0 occupied"
            assert self.pmt_index[key] == slot
            grouped.setdefault(key.pid, []).append(slot)
        assert len(self.pmt_index) == sum(len(v) for v in grouped.values())
        assert {p: sorted(s) for p, s in self.mpt.items() if s} == grouped
        assert not set(self.backup_map) & set(self.pmt_index)
        backup_grouped = {p: sorted(k) for p, k in self.backup_mpt.items() if k}
        expected = {}
        for key in self.backup_map:
            expected.setdefault(key.pid, []).append(key)
        assert backup_grouped == {p: sorted(k) for p, k in expected.items()}

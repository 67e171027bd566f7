"""Physical-address tagging and the request vocabulary.

A tagged physical address is a 64-bit integer.  The low 48 bits are the
byte address into the device; bits 48-56 hold a 9-bit monitor index that
the page-fault handler stamps and the memory controller reads back.  Index
0 means "not monitored".
"""

import enum
from typing import NamedTuple

from .errors import InvalidArgument

DEVICE_BITS = 48
METABIT_SHIFT = DEVICE_BITS
METABIT_WIDTH = 9
DEVICE_MASK = (1 << DEVICE_BITS) - 1
METABIT_MASK = (1 << METABIT_WIDTH) - 1
MAX_MONITOR_INDEX = METABIT_MASK  # 511
NUM_MONITOR_SLOTS = MAX_MONITOR_INDEX + 1  # 512, slot 0 reserved

BLOCK_SIZE = 64
BLOCK_SHIFT = 6
PAGE_SIZE = 4096
PAGE_SHIFT = 12


def encode_metabits(device_address: int, index: int) -> int:
    if not 0 <= device_address <= DEVICE_MASK:
        raise InvalidArgument(f"device address {device_address:#x} wider than {DEVICE_BITS} bits")
    if not 0 <= index <= MAX_MONITOR_INDEX:
        raise InvalidArgument(f"monitor index {index} outside 0..{MAX_MONITOR_INDEX}")
    return (index << METABIT_SHIFT) | device_address


def extract_metabits(addr: int) -> int:
    return (addr >> METABIT_SHIFT) & METABIT_MASK


def trim_address(addr: int) -> int:
    return addr & DEVICE_MASK


class OpKind(enum.IntEnum):
    READ = 0
    WRITE = 1


class MonitorFlag(enum.IntFlag):
    NONE = 0b00
    READ = 0b01
    WRITE = 0b10
    READ_WRITE = 0b11

    def matches(self, op: OpKind) -> bool:
        if op == OpKind.WRITE:
            return bool(self & MonitorFlag.WRITE)
        return bool(self & MonitorFlag.READ)


def flag_matches(flag: int, op: int) -> bool:
    """Integer form of `MonitorFlag.matches` for the hot path."""
    return bool(flag & (2 if op else 1))


class MemoryRequest(NamedTuple):
    address: int
    op: OpKind
    pid: int
    logical_time: int

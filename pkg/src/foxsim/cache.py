from __future__ import annotations

from collections import OrderedDict

from .errors import InvalidArgument


class CacheModel:
    """Set-associative, write-back, LRU tag store (no data).

    ``access`` returns True on a hit.  After each call ``evicted_dirty`` says
    whether the fill pushed out a dirty line.
    """

    def __init__(self, capacity: int, ways: int, block_size: int = 64):
        if capacity <= 0 or ways <= 0 or block_size <= 0:
            raise InvalidArgument("cache geometry must be positive")
        if capacity % (ways * block_size):
            raise InvalidArgument("capacity must be a multiple of ways * block_size")
        self.capacity = capacity
        self.ways = ways
        self.block_size = block_size
        self.block_shift = block_size.bit_length() - 1
        if 1 << self.block_shift != block_size:
            raise InvalidArgument("block size must be a power of two")
        self.num_sets = capacity // (ways * block_size)
        self.sets = [OrderedDict() for _ in range(self.num_sets)]
        self.hits = 0
        self.misses = 0
        self.writebacks = 0
        self.evicted_dirty = False

    def access(self, addr: int, write: bool = False) -> bool:
        block = addr >> self.block_shift
        lines = self.sets[block % self.num_sets]
        if block in lines:
            lines.move_to_end(block)
            if write:
                lines[block] = True
            self.hits += 1
            self.evicted_dirty = False
            return True
        self.misses += 1
        dirty_victim = False
        if len(lines) >= self.ways:
            _, dirty_victim = lines.popitem(last=False)
            if dirty_victim:
                self.writebacks += 1
        lines[block] = write
        self.evicted_dirty = dirty_victim
        return False

    def contains(self, addr: int) -> bool:
        block = addr >> self.block_shift
        return block in self.sets[block % self.num_sets]

    def lru_order(self, set_index: int) -> list[int]:
        """Block numbers of one set, least recently used first."""
        return list(self.sets[set_index])

    def occupancy(self) -> int:
        return sum(len(s) for s in self.sets) * self.block_size

    def flush(self) -> int:
        """Write back every dirty line; returns how many were written."""
        count = 0
        for lines in self.sets:
            for block, dirty in lines.items():
                if dirty:
                    lines[block] = False
                    count += 1
        self.writebacks += count
        return count

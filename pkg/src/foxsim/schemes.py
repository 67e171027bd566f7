"""Monitoring scheme matrix and run configuration."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

from .errors import InvalidArgument

GiB = 1 << 30

MEMORY_SIZE = 16 * GiB
# Persistent-memory window of the simulated 16 GB machine.
NVM_WINDOW = (12 * GiB, 16 * GiB)
RECORD_SIZE = 32
CIRCULAR_FRACTION = 20


class Scheme(str, enum.Enum):
    BASELINE = "baseline"
    FULL_RW = "full_rw"
    PERSIST_RW = "persist_rw"
    FULL_W = "full_w"
    PERSIST_W = "persist_w"
    DIRECTORY = "directory"

    @property
    def write_only(self) -> bool:
        return self in (Scheme.FULL_W, Scheme.PERSIST_W)

    @property
    def persist(self) -> bool:
        return self in (Scheme.PERSIST_RW, Scheme.PERSIST_W)

    @property
    def full(self) -> bool:
        return self in (Scheme.FULL_RW, Scheme.FULL_W)

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise InvalidArgument(f"unknown scheme {name!r} (expected one of: {valid})") from None


class StorageKind(str, enum.Enum):
    CIRCULAR = "circular"
    FIXED = "fixed"


def default_circular_capacity(memory_size: int = MEMORY_SIZE) -> int:
    return memory_size // CIRCULAR_FRACTION // RECORD_SIZE


@dataclass(frozen=True)
class StorageConfig:
    kind: StorageKind = StorageKind.CIRCULAR
    memory_size: int = MEMORY_SIZE
    # None means memory_size / 20 worth of 32-byte records.
    capacity_records: Optional[int] = None
    # None disables the periodic backup.
    backup_threshold: Optional[float] = 0.5

    @property
    def capacity(self) -> int:
        if self.capacity_records is not None:
            return self.capacity_records
        return default_circular_capacity(self.memory_size)

    def validate(self) -> None:
        if self.memory_size <= 0 or self.memory_size % 64:
            raise InvalidArgument("memory_size must be a positive multiple of 64")
        if self.capacity < 1:
            raise InvalidArgument("circular capacity must be at least one record")
        if self.backup_threshold is not None and not self.backup_threshold > 0:
            raise InvalidArgument("backup_threshold must be positive")


@dataclass(frozen=True)
class CacheConfig:
    counter_cache_bytes: int = 128 * 1024
    counter_cache_ways: int = 8
    monitor_cache_bytes: int = 64 * 1024
    monitor_cache_ways: int = 8


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.BASELINE
    storage: StorageConfig = field(default_factory=StorageConfig)
    nvm_window: Optional[Tuple[int, int]] = NVM_WINDOW
    monitored_dir: Optional[str] = None
    caches: CacheConfig = field(default_factory=CacheConfig)

    def validate(self) -> None:
        if self.scheme is Scheme.DIRECTORY and not self.monitored_dir:
            raise InvalidArgument("directory scheme needs monitored_dir")
        if self.scheme.persist:
            if self.nvm_window is None:
                raise InvalidArgument(f"{self.scheme.value} needs an nvm_window")
            lo, hi = self.nvm_window
            if not 0 <= lo < hi:
                raise InvalidArgument(f"bad nvm_window {self.nvm_window}")
        self.storage.validate()

    def with_scheme(self, scheme: Scheme) -> "SchemeConfig":
        return replace(self, scheme=scheme)


# Keys accepted in a JSON config file.
CONFIG_KEYS = {
    "scheme", "storage", "memory_size", "capacity_records", "backup_threshold",
    "nvm_window", "monitored_dir", "counter_cache_bytes", "counter_cache_ways",
    "monitor_cache_bytes", "monitor_cache_ways",
    "read_ns", "write_ns", "aes_cycles", "cpu_ghz",
}


def config_from_mapping(data: dict) -> SchemeConfig:
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise InvalidArgument(f"unknown config keys: {', '.join(sorted(unknown))}")
    storage = StorageConfig(
        kind=StorageKind(data.get("storage", "circular")),
        memory_size=int(data.get("memory_size", MEMORY_SIZE)),
        capacity_records=data.get("capacity_records"),
        backup_threshold=data.get("backup_threshold", 0.5),
    )
    caches = CacheConfig(
        counter_cache_bytes=int(data.get("counter_cache_bytes", 128 * 1024)),
        counter_cache_ways=int(data.get("counter_cache_ways", 8)),
        monitor_cache_bytes=int(data.get("monitor_cache_bytes", 64 * 1024)),
        monitor_cache_ways=int(data.get("monitor_cache_ways", 8)),
    )
    window = data.get("nvm_window", list(NVM_WINDOW))
    cfg = SchemeConfig(
        scheme=Scheme.parse(data.get("scheme", "baseline")),
        storage=storage,
        nvm_window=tuple(window) if window is not None else None,
        monitored_dir=data.get("monitored_dir"),
        caches=caches,
    )
    return cfg


def load_config(path) -> Tuple[SchemeConfig, dict]:
    """Read a JSON config file; returns the scheme config and the raw mapping."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidArgument(f"{path}: top level must be an object")
    try:
        return config_from_mapping(data), data
    except ValueError as exc:
        raise InvalidArgument(f"{path}: {exc}") from None

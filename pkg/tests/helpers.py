"""Trace builders shared by the test modules."""

import random

from foxsim.address import MonitorFlag
from foxsim.schemes import Scheme, SchemeConfig, StorageConfig, StorageKind
from foxsim.workload import Access, GeneratorSpec, generate, mix

SECRET = "/nvm/secret"

_FLAGS = [MonitorFlag.READ_WRITE, MonitorFlag.READ_WRITE, MonitorFlag.WRITE,
          MonitorFlag.READ, MonitorFlag.NONE]


def event_budget(seed: int) -> int:
    """Log-uniform event count between 10^4 (seed 0) and 10^5 (seed 99)."""
    return round(10 ** (4 + seed / 99))


def random_trace(seed: int, events: int):
    """A mix of 1-4 processes with assorted kinds, flags and directories.

    Some processes share one file, and a few accesses are shifted so they
    straddle two 64-byte blocks.
    """
    rng = random.Random(seed)
    nproc = rng.randint(1, 4)
    shared_path = f"{SECRET}/shared.pool"
    traces = []
    per = max(1, events // nproc)
    for i in range(nproc):
        kind = rng.choice(["daxbench", "swaparray_like", "hashtable_like", "spec_like"])
        file_size = rng.choice([64 << 10, 1 << 20, 4 << 20])
        flag = rng.choice(_FLAGS)
        path = None
        if kind != "spec_like":
            if rng.random() < 0.3:
                path, flag, file_size = shared_path, MonitorFlag.READ_WRITE, 1 << 20
            else:
                where = SECRET if rng.random() < 0.5 else "/nvm/public"
                path = f"{where}/{kind}.{i + 1}.pool"
        spec = GeneratorSpec(kind=kind, file_size=file_size, rw_ratio=rng.random(),
                             locality=rng.choice([0.0, 0.5, 0.9]), event_count=per,
                             seed=seed * 7 + i, pid=i + 1, path=path, flag=flag,
                             uid=1000, gid=100, exit=rng.random() < 0.8)
        trace = generate(spec)
        for j, ev in enumerate(trace):
            if ev.code == "A" and rng.random() < 0.05 and ev.vaddr + 48 + 64 <= file_size:
                trace[j] = Access(ev.pid, ev.op, ev.vaddr + 48, 64)
        traces.append(trace)
    return mix(traces, seed)


def config_for(scheme: Scheme, storage=StorageKind.CIRCULAR, capacity=4096, threshold=0.5):
    return SchemeConfig(
        scheme=scheme,
        storage=StorageConfig(kind=storage, capacity_records=capacity, backup_threshold=threshold),
        monitored_dir=SECRET if scheme is Scheme.DIRECTORY else None,
    )

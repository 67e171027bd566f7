"""Trace replay under a scheme, the cost model, and CSV reports.

Logical time: the replay clock advances by one for every trace event; an
access spanning several 64-byte blocks advances it once per extra block, so
each memory request carries a distinct, strictly increasing time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

from .address import BLOCK_SHIFT, BLOCK_SIZE, PAGE_SHIFT, PAGE_SIZE, MemoryRequest
from .controller import MemoryController, TrafficCounters
from .errors import InvalidArgument
from .kernel import Kernel
from .logstore import LogStore, MonitorRecord
from .schemes import Scheme, SchemeConfig
from .workload import trace_digest

CSV_COLUMNS = [
    "scheme", "data_reads", "data_writes", "counter_reads", "counter_writes",
    "monitor_reads", "monitor_writes", "total_writes", "norm_writes", "norm_throughput",
]


@dataclass(frozen=True)
class CostParams:
    read_ns: float = 60.0
    write_ns: float = 150.0
    aes_cycles: int = 24
    cpu_ghz: float = 1.0
    l1_cycles: int = 2
    l2_cycles: int = 20
    l3_cycles: int = 32

    def __post_init__(self):
        for name in ("read_ns", "write_ns", "aes_cycles", "cpu_ghz",
                     "l1_cycles", "l2_cycles", "l3_cycles"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")

    @property
    def aes_ns(self) -> float:
        return self.aes_cycles / self.cpu_ghz

    @classmethod
    def from_mapping(cls, data: dict) -> "CostParams":
        keys = ("read_ns", "write_ns", "aes_cycles", "cpu_ghz")
        return cls(**{k: data[k] for k in keys if k in data})


def simulated_time(counters: TrafficCounters, params: CostParams = CostParams()) -> float:
    """Additive service time in ns.

    reads x read_ns + writes x write_ns, plus exposed AES time: pad
    generation overlaps a memory fetch, so only ``max(0, aes - read)`` shows
    on fetches, and the full AES latency shows on monitor-cache hits, where
    the log line is re-encrypted without any fetch to hide behind.
    """
    c = counters
    reads = c.data_reads + c.counter_reads + c.monitor_reads
    writes = c.data_writes + c.counter_writes + c.monitor_writes
    exposed = max(0.0, params.aes_ns - params.read_ns)
    return (reads * params.read_ns + writes * params.write_ns
            + (c.data_reads + c.monitor_reads) * exposed
            + c.mc_hits * params.aes_ns)


@dataclass
class RunReport:
    scheme: Scheme
    counters: TrafficCounters
    total_nvm_writes: int
    total_nvm_reads: int
    simulated_time_ns: float
    requests: int
    trace_digest: str
    writes_normalized_to_baseline: Optional[float] = None
    throughput_normalized_to_baseline: Optional[float] = None
    records: Optional[list] = field(default=None, repr=False)
    audit_log: Optional[list] = field(default=None, repr=False)
    omft_dump: Optional[bytes] = field(default=None, repr=False)
    ordering_ok: Optional[bool] = None

    @property
    def throughput(self) -> float:
        """Requests per simulated nanosecond."""
        return self.requests / self.simulated_time_ns if self.simulated_time_ns else 0.0

    def normalized(self, baseline: "RunReport") -> "RunReport":
        if baseline.trace_digest != self.trace_digest:
            raise InvalidArgument("report and baseline come from different traces")
        if baseline.scheme is not Scheme.BASELINE:
            raise InvalidArgument("normalization needs an encryption-baseline run")
        if self is baseline or self.scheme is Scheme.BASELINE:
            self.writes_normalized_to_baseline = 1.0
            self.throughput_normalized_to_baseline = 1.0
            return self
        self.writes_normalized_to_baseline = (
            self.total_nvm_writes / baseline.total_nvm_writes if baseline.total_nvm_writes else 1.0)
        self.throughput_normalized_to_baseline = (
            self.throughput / baseline.throughput if baseline.throughput else 1.0)
        return self


class Simulator:
    """Kernel shim + memory controller + log store driven by a trace."""

    def __init__(self, config: SchemeConfig, strict_ordering: bool = False,
                 keep_records: bool = True, sink=None, kernel=None):
        config.validate()
        self.config = config
        self.kernel = kernel if kernel is not None else Kernel(config)
        self.log = LogStore(config.storage, sink=sink)
        self.controller = MemoryController(self.log, config.caches, strict_ordering, keep_records)
        self.clock = 0
        self.requests = 0

    def _sync(self):
        outbox = self.kernel.outbox
        deliver = self.controller.deliver
        while outbox:
            deliver(outbox.popleft())

    def _flush_overflow(self):
        pending = self.kernel.overflow_records
        if pending:
            for rec in pending:
                self.log.store_kernel(rec)
            pending.clear()

    def replay(self, events) -> None:
        kernel = self.kernel
        ctrl = self.controller
        outbox = kernel.outbox
        issue = ctrl.issue
        clock = self.clock
        requests = self.requests
        try:
            for ev in events:
                code = ev.code
                clock += 1
                if code == "A":
                    pid, op, vaddr, size = ev
                    table = kernel.page_tables.get(pid)
                    first = vaddr >> BLOCK_SHIFT
                    last = (vaddr + size - 1) >> BLOCK_SHIFT
                    for block in range(first, last + 1):
                        if block != first:
                            clock += 1
                        va = vaddr if block == first else block << BLOCK_SHIFT
                        base = table.get(va >> PAGE_SHIFT) if table is not None else None
                        if base is None:
                            base = kernel.handle_page_fault(pid, va)
                            table = kernel.page_tables.get(pid)
                        if outbox:
                            self._sync()
                        issue(MemoryRequest(base | (va & (PAGE_SIZE - 1)), op, pid, clock))
                        requests += 1
                elif code == "M":
                    meta = kernel.lookup(ev.path)
                    kernel.dax_mmap(ev.pid, meta, ev.length, ev.shared, clock)
                    self._sync()
                    self._flush_overflow()
                elif code == "X":
                    kernel.handle_exit(ev.pid, clock)
                    self._sync()
                    self._flush_overflow()
                elif code == "R":
                    kernel.register_file(ev.path, ev.uid, ev.gid, ev.flag)
                elif code == "D":
                    kernel.set_monitored_directory(ev.path)
                else:
                    raise InvalidArgument(f"unknown trace event {ev!r}")
        finally:
            self.clock = clock
            self.requests = requests

    def finish(self) -> None:
        self.controller.finish()


def run_experiment(trace, scheme: SchemeConfig, params: CostParams = CostParams(),
                   strict_ordering: bool = False, keep_records: bool = True,
                   sink=None, digest: Optional[str] = None) -> RunReport:
    """Replay ``trace`` (a list of events) under ``scheme``."""
    sim = Simulator(scheme, strict_ordering=strict_ordering, keep_records=keep_records, sink=sink)
    sim.replay(trace)
    sim.finish()
    c = sim.controller.counters
    report = RunReport(
        scheme=scheme.scheme,
        counters=c,
        total_nvm_writes=c.data_writes + c.counter_writes + c.monitor_writes,
        total_nvm_reads=c.data_reads + c.counter_reads + c.monitor_reads,
        simulated_time_ns=simulated_time(c, params),
        requests=sim.requests,
        trace_digest=digest if digest is not None else trace_digest(trace),
        records=sim.controller.committed,
        audit_log=sim.log.audit_log(),
        omft_dump=sim.controller.omft.dump(),
        ordering_ok=sim.controller.ordering_ok() if strict_ordering else None,
    )
    if scheme.scheme is Scheme.BASELINE:
        report.normalized(report)
    return report


def compare(reports, baseline: RunReport) -> str:
    """CSV table, one row per report, normalized to ``baseline``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        rep.normalized(baseline)
        c = rep.counters
        writer.writerow([
            rep.scheme.value, c.data_reads, c.data_writes, c.counter_reads, c.counter_writes,
            c.monitor_reads, c.monitor_writes, rep.total_nvm_writes,
            _fmt(rep.writes_normalized_to_baseline), _fmt(rep.throughput_normalized_to_baseline),
        ])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(round(x, 6))


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))

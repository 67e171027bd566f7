"""Dependence graphs rebuilt from audit logs, and backtracking over them.

Nodes are ``("P", pid)`` and ``("F", inode)`` (or ``("F", inode, block)``
with ``per_offset=True``).  A write is an edge process -> file, a read an
edge file -> process, so edges always point along the information flow.
An mmap seen by a syscall-level auditor becomes a file -> process edge with
op ``"M"``.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import InvalidArgument, NotFound
from .logstore import MonitorRecord, decode_log, read_log

READ, WRITE, MMAP = "R", "W", "M"


def proc(pid: int) -> tuple:
    return ("P", pid)


def file(inode: int, block: Optional[int] = None) -> tuple:
    return ("F", inode) if block is None else ("F", inode, block)


def node_label(node: tuple) -> str:
    if len(node) == 3:
        return f"F{node[1]}@{node[2]:#x}"
    return f"{node[0]}{node[1]}"


@dataclass
class Edge:
    src: tuple
    dst: tuple
    op: str
    first_time: int
    last_time: int
    count: int = 1
    lo_block: Optional[int] = None
    hi_block: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.src, self.dst, self.op)

    def absorb(self, time: int, block: Optional[int]) -> None:
        self.first_time = min(self.first_time, time)
        self.last_time = max(self.last_time, time)
        self.count += 1
        if block is not None:
            self.lo_block = block if self.lo_block is None else min(self.lo_block, block)
            self.hi_block = block if self.hi_block is None else max(self.hi_block, block)

    def line(self) -> str:
        text = (f"{node_label(self.src)} -> {node_label(self.dst)} {self.op} "
                f"t=[{self.first_time},{self.last_time}] n={self.count}")
        if self.lo_block is not None:
            text += f" blocks=[{self.lo_block:#x},{self.hi_block:#x}]"
        return text


class DependenceGraph:
    def __init__(self):
        self.nodes: set = set()
        self.edges: dict[tuple, Edge] = {}
        self._incoming: dict[tuple, list] = defaultdict(list)

    def __len__(self):
        return len(self.edges)

    def add_node(self, node: tuple) -> None:
        self.nodes.add(node)

    def add_event(self, src: tuple, dst: tuple, op: str, time: int,
                  block: Optional[int] = None) -> Edge:
        self.nodes.add(src)
        self.nodes.add(dst)
        key = (src, dst, op)
        edge = self.edges.get(key)
        if edge is None:
            edge = Edge(src, dst, op, time, time, 1, block, block)
            self.edges[key] = edge
            self._incoming[dst].append(edge)
        else:
            edge.absorb(time, block)
        return edge

    def incoming(self, node: tuple) -> list:
        return sorted(self._incoming.get(node, ()), key=lambda e: e.first_time)

    def export(self) -> str:
        """Adjacency list, one edge per line, in a stable order."""
        ordered = sorted(self.edges.values(),
                         key=lambda e: (e.first_time, node_label(e.src), node_label(e.dst), e.op))
        return "".join(e.line() + "\n" for e in ordered)

    def summary(self) -> str:
        rows = defaultdict(lambda: [0, 0, 0, set()])
        for e in self.edges.values():
            if e.op == WRITE:
                p, f = e.src, e.dst
                rows[p][1] += e.count
            elif e.op == READ:
                p, f = e.dst, e.src
                rows[p][0] += e.count
            else:
                p, f = e.dst, e.src
                rows[p][2] += 1
            rows[p][3].add(f[:2])
        lines = ["process,reads,writes,mmaps,files"]
        for p in sorted(rows):
            r, w, m, files = rows[p]
            lines.append(f"{node_label(p)},{r},{w},{m},{len(files)}")
        return "\n".join(lines) + "\n"


def _records(source) -> Iterable[MonitorRecord]:
    if isinstance(source, (bytes, bytearray)):
        return decode_log(bytes(source))
    if isinstance(source, (str,)) or hasattr(source, "__fspath__"):
        return read_log(source)
    return source


def build_graph(source, per_offset: bool = False) -> DependenceGraph:
    """Fold a FOXL log (path, bytes or record iterable) into a graph."""
    graph = DependenceGraph()
    for rec in _records(source):
        rec = MonitorRecord(*rec)
        p = proc(rec.pid)
        if rec.is_kernel_event:
            graph.add_node(p)
            if not rec.is_exit:
                graph.add_event(file(rec.file_inode), p, MMAP, rec.timestamp)
            else:
                graph.add_node(file(rec.file_inode))
            continue
        f = file(rec.inode, rec.block_address if per_offset else None)
        if rec.op:
            graph.add_event(p, f, WRITE, rec.timestamp, rec.block_address)
        else:
            graph.add_event(f, p, READ, rec.timestamp, rec.block_address)
    return graph


def coarse_graph(trace) -> DependenceGraph:
    """What a syscall-level auditor sees: mmap() and exit() only."""
    graph = DependenceGraph()
    inodes: dict[str, int] = {}
    clock = 0
    for ev in trace:
        clock += 1
        if ev.code == "R":
            inodes.setdefault(ev.path, len(inodes) + 1)
        elif ev.code == "M":
            graph.add_event(file(inodes[ev.path]), proc(ev.pid), MMAP, clock)
        elif ev.code == "X":
            graph.add_node(proc(ev.pid))
        elif ev.code == "A" and ev.size > 64 - ev.vaddr % 64:
            clock += (ev.vaddr + ev.size - 1) // 64 - ev.vaddr // 64
    return graph


def backtrack(graph: DependenceGraph, node: tuple, detection_time: int) -> DependenceGraph:
    """Everything that could have flowed into ``node`` through edges that
    first occurred at or before ``detection_time``."""
    if node not in graph.nodes:
        raise NotFound(f"node {node_label(node)} not in graph")
    sub = DependenceGraph()
    sub.add_node(node)
    stack = [node]
    while stack:
        n = stack.pop()
        for edge in graph.incoming(n):
            if edge.first_time > detection_time:
                continue
            sub.edges[edge.key] = edge
            sub._incoming[edge.dst].append(edge)
            if edge.src not in sub.nodes:
                sub.nodes.add(edge.src)
                stack.append(edge.src)
    return sub


def blindspot_diff(fine: DependenceGraph, coarse: DependenceGraph) -> set:
    """Edge keys present only in the fine-grained graph."""
    return set(fine.edges) - set(coarse.edges)


_QUERY = re.compile(r"^([PF]):(\d+)@t=(\d+)$")


def parse_query(text: str) -> tuple:
    """``F:9@t=500`` -> (("F", 9), 500)."""
    m = _QUERY.match(text.strip())
    if not m:
        raise InvalidArgument(f"bad backtrack query {text!r}; expected e.g. F:9@t=500")
    return (m.group(1), int(m.group(2))), int(m.group(3))

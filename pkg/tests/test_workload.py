from hypothesis import given, settings, strategies as st
import pytest

from foxsim.address import MonitorFlag, OpKind
from foxsim.errors import InvalidArgument, ParseError
from foxsim.kernel import Kernel
from foxsim.schemes import Scheme, SchemeConfig
from foxsim.workload import (
    KINDS, Access, Exit, GeneratorSpec, Mmap, RegisterFile, SetDir, format_trace, generate, mix,
    mix_preset, parse_line, parse_trace, trace_digest,
)


def test_parse_access():
    assert parse_line("A 12 W 0x1000 64") == Access(12, OpKind.WRITE, 0x1000, 64)


def test_parse_all_kinds():
    text = """# comment
R /nvm/a 1000 100 11
D /nvm/secret
M 3 /nvm/a 4096 P   # private
A 3 R 0x40 8

X 3
"""
    assert parse_trace(text) == [
        RegisterFile("/nvm/a", 1000, 100, 3), SetDir("/nvm/secret"), Mmap(3, "/nvm/a", 4096, False),
        Access(3, OpKind.READ, 0x40, 8), Exit(3),
    ]


def test_parse_empty():
    assert parse_trace("") == []
    assert parse_trace(["\n", "# only a comment\n"]) == []


@pytest.mark.parametrize("line,column", [
    ("A 12 Q 0x1000 64", 6),
    ("A 12 W 4096 64", 8),
    ("A 12 W 0x1000 0", 15),
    ("A 70000 W 0x0 1", 3),
    ("Z 1", 1),
    ("X", 2),
    ("X 1 2", 5),
    ("R /nvm/a 1 1 12", 14),
    ("R nvm/a 1 1 11", 3),
    ("M 1 /nvm/a 4096 Q", 17),
])
def test_parse_errors_carry_column(line, column):
    with pytest.raises(ParseError) as info:
        parse_trace("X 1\n" + line + "\n")
    assert info.value.line == 2
    assert info.value.column == column


@pytest.mark.parametrize("kind", KINDS)
def test_generate_deterministic_and_roundtrips(kind):
    spec = GeneratorSpec(kind=kind, event_count=2000, seed=4, file_size=1 << 20)
    a, b = generate(spec), generate(spec)
    assert format_trace(a) == format_trace(b)
    assert parse_trace(format_trace(a)) == a
    assert trace_digest(a) == trace_digest(b)
    assert trace_digest(generate(GeneratorSpec(kind=kind, event_count=2000, seed=5,
                                               file_size=1 << 20))) != trace_digest(a)


@pytest.mark.parametrize("kind", KINDS)
def test_accesses_stay_inside_mapping(kind):
    spec = GeneratorSpec(kind=kind, event_count=3000, seed=1, file_size=64 << 10, locality=0.5)
    trace = generate(spec)
    assert trace[0].code == "R" and trace[1].code == "M" and trace[-1] == Exit(spec.pid)
    accesses = [ev for ev in trace if ev.code == "A"]
    assert len(accesses) >= 3000 * 0.9
    assert all(0 <= ev.vaddr and ev.vaddr + ev.size <= spec.file_size for ev in accesses)


def test_daxbench_read_only_ratio():
    trace = generate(GeneratorSpec(kind="daxbench", rw_ratio=1.0, event_count=5000))
    assert not [ev for ev in trace if ev.code == "A" and ev.op == OpKind.WRITE]


def test_spec_like_never_in_persistent_window():
    trace = generate(GeneratorSpec(kind="spec_like", event_count=200, seed=9))
    for scheme in (Scheme.PERSIST_RW, Scheme.PERSIST_W):
        k = Kernel(SchemeConfig(scheme=scheme))
        for ev in trace:
            if ev.code == "R":
                meta = k.register_file(ev.path, ev.uid, ev.gid, ev.flag)
                assert k.resolve_monitor_flag(meta) == MonitorFlag.NONE
            elif ev.code == "M":
                k.dax_mmap(ev.pid, meta, ev.length)
                assert k.resolve_monitor_flag(meta) == MonitorFlag.NONE


def test_generator_spec_validation():
    with pytest.raises(InvalidArgument):
        generate(GeneratorSpec(kind="nope"))
    with pytest.raises(InvalidArgument):
        generate(GeneratorSpec(kind="daxbench", rw_ratio=1.5))


def test_mix_preserves_per_pid_order():
    a = generate(GeneratorSpec(kind="daxbench", event_count=500, pid=1, seed=1))
    b = generate(GeneratorSpec(kind="hashtable_like", event_count=500, pid=2, seed=2))
    m = mix([a, b], seed=3)
    assert [ev for ev in m if getattr(ev, "pid", None) == 1 or ev == a[0]] == a
    assert len(m) == len(a) + len(b)
    assert mix([a, b], seed=3) == m


def test_mix_edge_cases():
    assert mix([]) == []
    assert mix([[], []]) == []
    a = generate(GeneratorSpec(kind="daxbench", event_count=10, pid=1))
    with pytest.raises(InvalidArgument):
        mix([a, a])


def test_mix1_shape():
    trace = mix_preset(1, event_count=500)
    paths = [ev.path for ev in trace if ev.code == "R"]
    assert len(paths) == 2
    assert not paths[0].startswith("/nvm/") and paths[1].startswith("/nvm/")


def test_mix5_shape():
    trace = mix_preset(5, event_count=500)
    paths = sorted(ev.path for ev in trace if ev.code == "R")
    assert paths == ["/nvm/public/hashtable_like.2.pool", "/nvm/secret/hashtable_like.1.pool"]
    assert {ev.pid for ev in trace if ev.code == "X"} == {1, 2}


def test_mix_preset_unknown():
    with pytest.raises(InvalidArgument):
        mix_preset(9)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 10**6), st.floats(0, 1), st.floats(0, 1))
def test_generated_traces_parse_back(kind, seed, rw, loc):
    spec = GeneratorSpec(kind=kind, event_count=200, seed=seed, rw_ratio=rw, locality=loc,
                         file_size=64 << 10)
    trace = generate(spec)
    assert parse_trace(format_trace(trace)) == trace

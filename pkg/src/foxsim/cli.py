"""``fox`` command line: gen, run, compare, analyze.

Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import FoxError
from .logstore import encode_log, read_log
from .metrics import CostParams, compare, run_experiment
from .provenance import backtrack, build_graph, parse_query
from .schemes import Scheme, SchemeConfig, StorageConfig, StorageKind, load_config
from .workload import KINDS, GeneratorSpec, format_trace, generate, mix_preset, parse_trace, trace_digest


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def write_atomic(path, data) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FOX_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"FOX_SEED must be an integer, got {env!r}") from None


def _int(text):
    return int(text, 0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fox", description="Hardware-assisted file auditing simulator for DAX NVM")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="generate a synthetic trace")
    g.add_argument("--kind", choices=KINDS, default="daxbench")
    g.add_argument("--mix", type=int, metavar="N", help="two-application mix preset 1..8 (overrides --kind)")
    g.add_argument("--rw-ratio", type=float, default=0.5, help="fraction of reads")
    g.add_argument("--events", type=int, default=10_000)
    g.add_argument("--file-size", type=_int, default=4 << 20)
    g.add_argument("--locality", type=float, default=0.0)
    g.add_argument("--pid", type=int, default=1)
    g.add_argument("--path", help="file path (default derived from kind and pid)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    def scheme_opts(p):
        p.add_argument("--trace", required=True)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--monitored-dir")
        p.add_argument("--storage", choices=[k.value for k in StorageKind])
        p.add_argument("--capacity", type=int, help="circular buffer capacity in records")
        p.add_argument("--strict-ordering-check", action="store_true")
        p.add_argument("--seed", type=int, help="accepted for symmetry; replay is deterministic")

    r = sub.add_parser("run", help="replay a trace under one scheme")
    scheme_opts(r)
    r.add_argument("--scheme", default=None)
    r.add_argument("--out-log")
    r.add_argument("--out-csv")
    r.add_argument("--omft-dump")

    c = sub.add_parser("compare", help="replay a trace under several schemes")
    scheme_opts(c)
    c.add_argument("--schemes", default="baseline,full_rw,persist_rw,full_w,persist_w")
    c.add_argument("--out", required=True, help="CSV output")
    c.add_argument("--log-dir", help="write one FOXL log per scheme here")
    c.add_argument("--jobs", type=int, default=1)

    a = sub.add_parser("analyze", help="rebuild a dependence graph from a FOXL log")
    a.add_argument("--log", required=True)
    a.add_argument("--backtrack", metavar="QUERY", help="e.g. F:9@t=500")
    a.add_argument("--summary", action="store_true")
    a.add_argument("--per-offset", action="store_true")
    a.add_argument("--out")
    return parser


def _base_config(args):
    if args.config:
        cfg, raw = load_config(args.config)
        params = CostParams.from_mapping(raw)
    else:
        cfg, params = SchemeConfig(), CostParams()
    storage = cfg.storage
    if args.storage:
        storage = replace(storage, kind=StorageKind(args.storage))
    if args.capacity is not None:
        storage = replace(storage, capacity_records=args.capacity)
    cfg = replace(cfg, storage=storage)
    if args.monitored_dir:
        cfg = replace(cfg, monitored_dir=args.monitored_dir)
    return cfg, params


def _config_for(base: SchemeConfig, scheme: Scheme) -> SchemeConfig:
    cfg = base.with_scheme(scheme)
    if scheme is Scheme.DIRECTORY and not cfg.monitored_dir:
        raise UsageError("the directory scheme needs --monitored-dir (or monitored_dir in --config)")
    return cfg


def _load_trace(path):
    with open(path) as fh:
        return parse_trace(fh)


def _run_one(job):
    trace, cfg, params, strict, digest = job
    return run_experiment(trace, cfg, params, strict_ordering=strict, keep_records=False, digest=digest)


def cmd_gen(args) -> int:
    seed = _seed(args)
    if args.mix is not None:
        events = mix_preset(args.mix, event_count=args.events, seed=seed, file_size=args.file_size,
                            locality=args.locality, rw_ratio=args.rw_ratio)
    else:
        spec = GeneratorSpec(kind=args.kind, file_size=args.file_size, rw_ratio=args.rw_ratio,
                             locality=args.locality, event_count=args.events, seed=seed,
                             pid=args.pid, path=args.path)
        events = generate(spec)
    write_atomic(args.out, format_trace(events))
    return 0


def _check_ordering(report, strict):
    if strict and not report.ordering_ok:
        raise FoxError(f"{report.scheme.value}: monitor/data ordering violated")


def cmd_run(args) -> int:
    base, params = _base_config(args)
    try:
        scheme = Scheme.parse(args.scheme) if args.scheme else base.scheme
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _config_for(base, scheme)
    trace = _load_trace(args.trace)
    digest = trace_digest(trace)
    report = run_experiment(trace, cfg, params, strict_ordering=args.strict_ordering_check,
                            keep_records=False, digest=digest)
    _check_ordering(report, args.strict_ordering_check)
    if scheme is Scheme.BASELINE:
        baseline = report
    else:
        baseline = run_experiment(trace, cfg.with_scheme(Scheme.BASELINE), params,
                                  keep_records=False, digest=digest)
    table = compare([report], baseline)
    if args.out_csv:
        write_atomic(args.out_csv, table)
    else:
        sys.stdout.write(table)
    if args.out_log:
        write_atomic(args.out_log, encode_log(report.audit_log))
    if args.omft_dump:
        write_atomic(args.omft_dump, report.omft_dump)
    return 0


def cmd_compare(args) -> int:
    base, params = _base_config(args)
    try:
        schemes = [Scheme.parse(s) for s in args.schemes.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not schemes:
        raise UsageError("--schemes is empty")
    configs = [_config_for(base, s) for s in schemes]
    trace = _load_trace(args.trace)
    digest = trace_digest(trace)
    strict = args.strict_ordering_check

    jobs = [(trace, cfg, params, strict, digest) for cfg in configs]
    need_baseline = Scheme.BASELINE not in schemes
    if need_baseline:
        jobs.append((trace, base.with_scheme(Scheme.BASELINE), params, False, digest))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    baseline = reports.pop() if need_baseline else reports[schemes.index(Scheme.BASELINE)]
    for rep in reports:
        _check_ordering(rep, strict)
    write_atomic(args.out, compare(reports, baseline))
    if args.log_dir:
        os.makedirs(args.log_dir, exist_ok=True)
        for rep in reports:
            write_atomic(Path(args.log_dir) / f"{rep.scheme.value}.foxl", encode_log(rep.audit_log))
    return 0


def cmd_analyze(args) -> int:
    graph = build_graph(read_log(args.log), per_offset=args.per_offset)
    if args.backtrack:
        try:
            node, t = parse_query(args.backtrack)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.per_offset and node[0] == "F":
            raise UsageError("--backtrack on file nodes needs the default (per-inode) graph")
        text = backtrack(graph, node, t).export()
    elif args.summary:
        text = graph.summary()
    else:
        text = graph.export()
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FoxError, OSError) as exc:
        print(f"fox: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Naive reference monitor.

Replays a trace with plain dictionaries and no hardware model: every access
is matched to its mapping, the (pid, inode) pair is looked up in an
unbounded map, and the flag decides whether a record is produced.  Used to
cross-check the kernel/controller pipeline; it shares only configuration
constants with it.
"""

from __future__ import annotations

from collections import Counter

from .schemes import GiB, NVM_WINDOW, Scheme, SchemeConfig

_PAGE = 4096
_BLOCK = 64


def _under(path, directory):
    return directory == "/" or path == directory or path.startswith(directory.rstrip("/") + "/")


def reference_records(trace, config: SchemeConfig, dax_mounts=("/nvm",),
                      nvm_region=NVM_WINDOW, conventional_base=1 * GiB) -> list:
    """Records as tuples (block_address, uid, gid, op, time, inode, dir_id, pid)."""
    files = {}          # path -> [inode, uid, gid, flag]
    by_inode = {}
    dirs = []           # [(path, id)]
    pages = {}          # inode -> [device page addresses]
    nvm_next = nvm_region[0]
    conv_next = conventional_base
    maps = {}           # pid -> [(vbase, length, inode)]
    next_v = {}         # pid -> next virtual base
    watched = {}        # (pid, inode) -> (flag, dir_id)
    kind = config.scheme
    out = []

    def dir_of(path):
        best, blen = 0, -1
        for d, i in dirs:
            if _under(path, d) and len(d) > blen:
                best, blen = i, len(d)
        return best

    def add_dir(path):
        path = path.rstrip("/") or "/"
        for d, i in dirs:
            if d == path:
                return
        dirs.append((path, len(dirs) + 1))

    if config.monitored_dir:
        add_dir(config.monitored_dir)

    clock = 0
    for ev in trace:
        clock += 1
        code = ev.code
        if code == "R":
            files[ev.path] = [len(files) + 1, ev.uid, ev.gid, ev.flag]
            by_inode[len(files)] = files[ev.path]
        elif code == "D":
            add_dir(ev.path)
        elif code == "M":
            inode, uid, gid, flag = files[ev.path]
            need = -(-ev.length // _PAGE)
            plist = pages.setdefault(inode, [])
            on_nvm = any(_under(ev.path, m) for m in dax_mounts)
            while len(plist) < need:
                if on_nvm:
                    plist.append(nvm_next)
                    nvm_next += _PAGE
                else:
                    plist.append(conv_next)
                    conv_next += _PAGE
            vbase = next_v.get(ev.pid, 0)
            maps.setdefault(ev.pid, []).append((vbase, need * _PAGE, inode))
            next_v[ev.pid] = vbase + need * _PAGE
            d = dir_of(ev.path)
            if kind is Scheme.BASELINE:
                flag = 0
            elif kind is Scheme.DIRECTORY:
                flag = flag if d else 0
            else:
                if kind in (Scheme.PERSIST_RW, Scheme.PERSIST_W):
                    lo, hi = config.nvm_window
                    if not lo <= plist[0] < hi:
                        flag = 0
                if kind in (Scheme.FULL_W, Scheme.PERSIST_W):
                    flag &= 2
            if flag:
                watched[(ev.pid, inode)] = (flag, d)
        elif code == "X":
            maps.pop(ev.pid, None)
            next_v.pop(ev.pid, None)
            for key in [k for k in watched if k[0] == ev.pid]:
                del watched[key]
        elif code == "A":
            start = ev.vaddr // _BLOCK
            stop = (ev.vaddr + ev.size - 1) // _BLOCK
            for n, block in enumerate(range(start, stop + 1)):
                if n:
                    clock += 1
                va = ev.vaddr if n == 0 else block * _BLOCK
                region = None
                for vbase, length, inode in maps.get(ev.pid, ()):
                    if vbase <= va < vbase + length:
                        region = (vbase, inode)
                        break
                if region is None:
                    raise LookupError(f"pid {ev.pid} touches unmapped {va:#x}")
                vbase, inode = region
                hit = watched.get((ev.pid, inode))
                if hit is None:
                    continue
                flag, d = hit
                wanted = 2 if ev.op else 1
                if not flag & wanted:
                    continue
                device = pages[inode][(va - vbase) // _PAGE] + (va % _PAGE)
                meta = by_inode[inode]
                out.append((device - device % _BLOCK, meta[1], meta[2], int(ev.op), clock,
                            inode, d, ev.pid))
    return out


def record_multiset(records) -> Counter:
    return Counter(tuple(r) for r in records)


def monitored_reads(trace, config: SchemeConfig) -> int:
    return sum(1 for r in reference_records(trace, config) if r[3] == 0)

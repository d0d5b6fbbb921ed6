"""Event-count microbenchmarks.

Every suite returns a list of flat dict rows (CSV ready).  Rows carry event
counter deltas, never timings.
"""
from __future__ import annotations

import csv
import io
from typing import Callable

from .domains import EventCounters
from .errors import OutOfGuardMemory, ParseError
from .kernel import Kernel
from .labels import Capability
from .memory import AccessKind, Backing, PagePerm
from .principals import MAIN_PRINCIPAL

MAIN = MAIN_PRINCIPAL
COUNTER_FIELDS = list(EventCounters.CSV_FIELDS) + ["pageTableWrites"]


class UnknownSuite(ParseError):
    code = "UnknownSuite"


def _delta(k: Kernel, before: EventCounters) -> dict[str, int]:
    d = k.counters.delta(before)
    return {f: getattr(d, f) for f in COUNTER_FIELDS}


def _mapped_guard(k: Kernel, backing: Backing, pages: int = 1, perm: PagePerm = PagePerm.RW) -> int:
    gid = k.create_guard(MAIN, backing)
    k.map_pages(MAIN, gid, pages * 4096, perm)
    return gid


def bench_protect() -> list[dict]:
    """Counter deltas of one setProtection per (backing, target) from an RW guard."""
    rows = []
    for backing in Backing:
        for target in PagePerm:
            k = Kernel(backing=backing)
            gid = _mapped_guard(k, backing, pages=4)
            before = k.counters.copy()
            k.set_protection(MAIN, gid, target)
            rows.append({"suite": "protect", "backing": backing.value, "target": target.name, **_delta(k, before)})
    return rows


def bench_domains(max_guards: int = 32, rounds: int = 3) -> list[dict]:
    """Sweep the number of live md guards; touch each one ``rounds`` times."""
    rows = []
    for n in range(1, max_guards + 1):
        k = Kernel(backing=Backing.MD)
        gids = [_mapped_guard(k, Backing.MD) for _ in range(n)]
        for _ in range(rounds):
            for gid in gids:
                k.access(MAIN, k.guard(gid).base, AccessKind.READ)
        c = k.counters
        rows.append({
            "suite": "domains",
            "guards": n,
            "capacity": k.engine.capacity,
            "evictions": c.domainEvictions,
            "restores": c.domainRestores,
            **{f: getattr(c, f) for f in COUNTER_FIELDS},
        })
    return rows


def _map_cycle(guards: int, pairs: int) -> dict[str, int]:
    k = Kernel(backing=Backing.MD, max_guards=max(guards, 64))
    gids = [_mapped_guard(k, Backing.MD) for _ in range(guards)]
    before = k.counters.copy()
    for i in range(pairs):
        gid = gids[i % guards]
        k.unmap_guard(MAIN, gid)
        k.map_pages(MAIN, gid, 4096, PagePerm.RW)
    return _delta(k, before)


def bench_create(pairs: int = 280) -> list[dict]:
    """Direct (guards within capacity) vs virtualized mg_mmap/munmap cycles."""
    capacity = Kernel().engine.capacity
    rows = []
    for config, guards in (("direct", capacity), ("virtualized", 2 * capacity)):
        d = _map_cycle(guards, pairs)
        rows.append({
            "suite": "create",
            "config": config,
            "guards": guards,
            "mmap_ops": pairs,
            "munmap_ops": pairs,
            **d,
            "total": sum(d[f] for f in EventCounters.CSV_FIELDS),
        })
    return rows


def bench_alloc(trials: int = 200) -> list[dict]:
    """Allocation/free pairs per size class; counts granule tag writes on mte."""
    rows = []
    for backing in (Backing.MD, Backing.MTE):
        for size in (16, 64, 256, 1024, 4096, 16384):
            k = Kernel(backing=backing)
            gid = _mapped_guard(k, backing, pages=64)
            before = k.counters.copy()
            tagged_before = len(k.engine.granules.tags)
            ok = failed = 0
            live = []
            for i in range(trials):
                try:
                    live.append(k.guard_alloc(MAIN, gid, size))
                    ok += 1
                except OutOfGuardMemory:
                    failed += 1
                if i % 3 == 2 and live:
                    k.guard_free(MAIN, gid, live.pop(0))
            rows.append({
                "suite": "alloc",
                "backing": backing.value,
                "size": size,
                "allocs": ok,
                "failures": failed,
                "live_bytes": k.heaps[gid].live_bytes(),
                "tagged_granules": len(k.engine.granules.tags) - tagged_before,
                **_delta(k, before),
            })
    return rows


def bench_clone(switches: int = 100) -> list[dict]:
    """Context-switch costs between a parent and a child that got ``k`` caps."""
    rows = []
    for passed in (0, 1, 4, 16):
        for backing in (Backing.MD, Backing.MTE):
            k = Kernel(backing=backing)
            gids = [_mapped_guard(k, backing) for _ in range(16)]
            caps = [Capability(k.guard(g).tag, plus=True) for g in gids[:passed]]
            before = k.counters.copy()
            child = k.clone(MAIN, (), caps)
            for i in range(switches):
                src, dst = (MAIN, child) if i % 2 == 0 else (child, MAIN)
                k.context_switch(src, dst)
            rows.append({
                "suite": "clone",
                "backing": backing.value,
                "caps_passed": passed,
                "child_caps": len(k.principal(child).caps),
                "switches": switches,
                **_delta(k, before),
            })
    return rows


SUITES: dict[str, Callable[[], list[dict]]] = {
    "create": bench_create,
    "protect": bench_protect,
    "alloc": bench_alloc,
    "clone": bench_clone,
    "domains": bench_domains,
}


def run_bench(suite: str) -> list[dict]:
    fn = SUITES.get(suite)
    if fn is None:
        raise UnknownSuite(f"unknown bench suite {suite!r}; choose from {', '.join(SUITES)}")
    return fn()


def rows_to_csv(rows: list[dict]) -> str:
    """Header row then one row per measurement, LF line endings."""
    if not rows:
        return ""
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return out.getvalue()

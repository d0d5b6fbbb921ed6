import pytest

from mgsim import Kernel
from mgsim.domains import AccessMode
from mgsim.errors import (
    GuardLimitExceeded,
    GuardLocked,
    NoSuchGuard,
    OutOfAddressSpace,
    ParseError,
    PermissionDenied,
)
from mgsim.labels import plus
from mgsim.memory import PAGE_SIZE, AccessKind, Backing, FaultCause, FaultRecord, PagePerm
from mgsim.oracle import oracle_access

MAIN = 0


def agree(k, pid, pointer, kind, size=1):
    """Kernel verdict, cross-checked against the oracle on the same state."""
    expected = oracle_access(k.snapshot(include_data=False), pid, pointer, kind.value, size)
    rec = k.access(pid, pointer, kind, size)
    actual = ("allowed", None) if rec is None else ("denied", rec.cause.value)
    assert actual == expected
    return rec


def test_map_populates_uniform_pages():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 65536, PagePerm.RW)
    g = k.guard(gid)
    assert base % PAGE_SIZE == 0 and len(g.pages) == 16
    assert len({e.domain for e in g.pages.values()}) == 1
    assert all(e.present and e.perm == PagePerm.RW for e in g.pages.values())


def test_map_one_byte_rounds_to_page():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 1)
    assert k.guard(gid).length == PAGE_SIZE


def test_map_needs_minus():
    k = Kernel()
    gid = k.create_guard(MAIN)
    tag = k.guard(gid).tag
    t = k.clone(MAIN, {tag}, [plus(tag)])
    with pytest.raises(PermissionDenied):
        k.map_pages(t, gid, 4096)
    with pytest.raises(ParseError):
        k.map_pages(MAIN, gid, 0)


def test_ranges_disjoint():
    k = Kernel()
    spans = []
    for n in (1, 5000, 65536, 4096, 12288):
        gid = k.create_guard(MAIN)
        base = k.map_pages(MAIN, gid, n)
        spans.append((base, k.guard(gid).length))
    spans.sort()
    for (a, n), (b, _) in zip(spans, spans[1:]):
        assert a + n <= b


def test_seventeen_md_guards_evict():
    k = Kernel()
    for _ in range(17):
        gid = k.create_guard(MAIN)
        k.map_pages(MAIN, gid, 4096)
    assert k.counters.domainEvictions >= 1


def test_guard_ids_never_reused():
    k = Kernel()
    a = k.create_guard(MAIN)
    ta = k.guard(a).tag
    k.destroy_guard(MAIN, a)
    b = k.create_guard(MAIN)
    assert b != a and k.guard(b).tag != ta


def test_guard_limit():
    k = Kernel(max_guards=2)
    k.create_guard(MAIN)
    k.create_guard(MAIN)
    with pytest.raises(GuardLimitExceeded):
        k.create_guard(MAIN)


def test_destroy_is_owner_only():
    k = Kernel()
    gid = k.create_guard(MAIN)
    tag = k.guard(gid).tag
    t = k.clone(MAIN)
    k.grant(MAIN, MAIN, t, tag)
    with pytest.raises(PermissionDenied):
        k.destroy_guard(t, gid)


def test_unmap_then_access_and_unmap_twice():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096)
    k.unmap_guard(MAIN, gid)
    with pytest.raises(NoSuchGuard):
        k.unmap_guard(MAIN, gid)
    assert agree(k, MAIN, base, AccessKind.READ).cause == FaultCause.PAGE_PERM


def test_freed_domain_index_reused():
    k = Kernel()
    a = k.create_guard(MAIN)
    k.map_pages(MAIN, a, 4096)
    idx = k.engine.index_of(a)
    k.unmap_guard(MAIN, a)
    assert idx not in k.engine.residency.values()
    b = k.create_guard(MAIN)
    k.map_pages(MAIN, b, 4096)
    assert k.engine.index_of(b) == idx


def test_set_protection_fast_and_slow_paths():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 16384, PagePerm.RW)
    c0 = k.counters.copy()
    k.set_protection(MAIN, gid, PagePerm.NONE)
    d = k.counters.delta(c0)
    assert (d.dacrWrites, d.tlbFlushes, d.pageTableWrites) == (1, 0, 0)
    c0 = k.counters.copy()
    k.set_protection(MAIN, gid, PagePerm.RO)
    d = k.counters.delta(c0)
    assert d.pageTableWrites >= 1 and d.tlbFlushes == 1
    assert k.engine.mode_of(gid) == AccessMode.CLIENT


def test_get_protection_is_read_only():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 4096, PagePerm.RW)
    assert k.get_protection(gid) == PagePerm.RW
    k.set_protection(MAIN, gid, "NONE")
    c0 = k.counters.copy()
    assert k.get_protection(gid) == PagePerm.NONE
    assert k.counters == c0


def test_protect_needs_minus_and_unlocked():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 4096)
    tag = k.guard(gid).tag
    t = k.clone(MAIN, {tag}, [plus(tag)])
    with pytest.raises(PermissionDenied):
        k.set_protection(t, gid, PagePerm.RO)
    k.lock(MAIN, gid)
    with pytest.raises(GuardLocked):
        k.set_protection(MAIN, gid, PagePerm.RO)


@pytest.mark.parametrize("backing", list(Backing))
def test_access_pipeline_cases(backing):
    k = Kernel(backing=backing)
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 8192)
    ptr = k.guard_alloc(MAIN, gid, 64)
    assert agree(k, MAIN, ptr, AccessKind.READ) is None
    assert agree(k, MAIN, ptr, AccessKind.WRITE, 64) is None
    thief = k.clone(MAIN)
    rec = agree(k, thief, ptr, AccessKind.READ)
    assert rec.cause == FaultCause.LABEL and not k.principal(thief).running
    assert agree(k, MAIN, 0x0FFF_0000, AccessKind.READ).cause == FaultCause.PAGE_PERM


def test_exec_on_rw_guard_is_page_perm():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096, PagePerm.RW)
    assert agree(k, MAIN, base, AccessKind.EXECUTE).cause == FaultCause.PAGE_PERM


def test_manager_mode_skips_page_check():
    # a domain-level override to Manager lets writes through RO page entries
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096, PagePerm.RW)
    for e in k.guard(gid).pages.values():
        e.perm = PagePerm.RO
    assert agree(k, MAIN, base, AccessKind.WRITE) is None


def test_domain_fault_from_noaccess_field():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096, PagePerm.RW)
    k.engine.set_dacr(k.engine.index_of(gid), AccessMode.NO_ACCESS)
    assert agree(k, MAIN, base, AccessKind.READ).cause == FaultCause.DOMAIN


def test_evicted_guard_still_accessible_and_restored():
    k = Kernel(domains=4)
    gids = []
    for _ in range(4):
        gid = k.create_guard(MAIN)
        k.map_pages(MAIN, gid, 4096)
        gids.append(gid)
    first = gids[0]
    assert first in k.engine.spill
    assert all(e.domain is None for e in k.guard(first).pages.values())
    assert agree(k, MAIN, k.guard(first).base, AccessKind.READ) is None
    assert first in k.engine.residency and k.counters.domainRestores == 1


def test_fault_record_line_round_trip():
    rec = FaultRecord(3, 2, 7, 0x1000_0040, AccessKind.WRITE, FaultCause.TAG_MISMATCH)
    line = rec.to_line()
    assert line == "3 2 7 0x10000040 write tag-mismatch"
    assert FaultRecord.from_line(line) == rec
    nog = FaultRecord(1, 0, None, 0x10, AccessKind.READ, FaultCause.PAGE_PERM)
    assert FaultRecord.from_line(nog.to_line()) == nog


def test_two_faults_ordered():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096)
    a, b = k.clone(MAIN), k.clone(MAIN)
    k.access(a, base, AccessKind.READ)
    k.access(b, base, AccessKind.WRITE)
    assert [f.seq for f in k.faults] == [1, 2]
    assert not k.principal(a).running and not k.principal(b).running


def test_read_write_round_trip():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 4096)
    p = k.guard_alloc(MAIN, gid, 32)
    assert k.write(MAIN, p, b"secret") is None
    assert k.read(MAIN, p, 6) == b"secret"


def test_remap_of_mapped_guard_rejected():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 4096)
    with pytest.raises(OutOfAddressSpace):
        k.map_pages(MAIN, gid, 4096)

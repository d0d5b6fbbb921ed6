"""The kernel-state object.

Every public method runs as one atomic transaction under a re-entrant lock.
Methods validate all preconditions before mutating anything, so a raised
:class:`~mgsim.errors.ApiError` leaves the state untouched.
"""
from __future__ import annotations

import functools
import random
import threading
from typing import Iterable

from .allocator import GuardHeap
from .domains import (
    FAST_PATH_PERMS,
    NUM_DOMAINS,
    RESERVED_DOMAINS,
    AccessMode,
    DacrVerdict,
    DomainEngine,
    dacr_check,
    mode_for,
)
from .errors import (
    AlreadyLocked,
    GuardLimitExceeded,
    GuardLocked,
    InvalidCapability,
    InvalidFree,
    NoSuchGuard,
    NoSuchPrincipal,
    NotLocked,
    OutOfAddressSpace,
    OutOfGuardMemory,
    ParseError,
    PermissionDenied,
)
from .labels import (
    MAX_TAG,
    RESERVED_TAG,
    Capability,
    CapSet,
    DelegationGraph,
    TagRegistry,
    check_flow,
    validate_label_change,
)
from .memory import (
    DEFAULT_BASE,
    GRANULE,
    PAGE_SIZE,
    AccessKind,
    AddressSpace,
    Backing,
    FaultCause,
    FaultRecord,
    Guard,
    PageEntry,
    PagePerm,
    page_round,
    strip_tag,
    with_tag,
)
from .principals import MAIN_PRINCIPAL, NORMAL_EXIT, ExitStatus, Principal

LOCK_TAG = RESERVED_TAG
DEFAULT_MAX_GUARDS = 64
RETAG_POLICIES = ("different", "random")


def _atomic(method):
    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self._lock:
            return method(self, *args, **kwargs)

    return wrapper


class Kernel:
    def __init__(
        self,
        backing: Backing | str = Backing.MD,
        domains: int = NUM_DOMAINS,
        reserved_domains: int = RESERVED_DOMAINS,
        max_guards: int = DEFAULT_MAX_GUARDS,
        seed: int = 0,
        retag_policy: str = "different",
        address_base: int = DEFAULT_BASE,
        tag_limit: int = MAX_TAG,
    ):
        if retag_policy not in RETAG_POLICIES:
            raise ValueError(f"retag policy must be one of {RETAG_POLICIES}")
        self.backing = Backing(backing)
        self.max_guards = max_guards
        self.retag_policy = retag_policy
        self.rng = random.Random(seed)
        self.tags = TagRegistry(tag_limit)
        self.delegations = DelegationGraph()
        self.principals: dict[int, Principal] = {MAIN_PRINCIPAL: Principal(MAIN_PRINCIPAL)}
        self.next_principal = MAIN_PRINCIPAL + 1
        self.locks: dict[int, int] = {}
        self.guards: dict[int, Guard] = {}
        self.next_guard = 1
        self.heaps: dict[int, GuardHeap] = {}
        self.space = AddressSpace(address_base)
        self.plain: dict[int, tuple[int, PagePerm]] = {}
        self.engine = DomainEngine(domains, reserved_domains)
        self.engine.on_evict = self._park
        self.pointer_tags: dict[int, int] = {}
        self.faults: list[FaultRecord] = []
        self._lock = threading.RLock()
        self._exited = threading.Condition(self._lock)

    @property
    def counters(self):
        return self.engine.counters

    # -- lookups ---------------------------------------------------------

    def _running(self, pid: int) -> Principal:
        p = self.principals.get(pid)
        if p is None:
            raise NoSuchPrincipal(f"principal {pid} does not exist")
        if not p.running:
            raise NoSuchPrincipal(f"principal {pid} has terminated")
        return p

    def _guard(self, gid: int) -> Guard:
        g = self.guards.get(gid)
        if g is None:
            raise NoSuchGuard(f"guard {gid} does not exist")
        return g

    def principal(self, pid: int) -> Principal:
        try:
            return self.principals[pid]
        except KeyError:
            raise NoSuchPrincipal(f"principal {pid} does not exist") from None

    def guard(self, gid: int) -> Guard:
        return self._guard(gid)

    def guard_at(self, address: int) -> Guard | None:
        for g in self.guards.values():
            if g.contains(address):
                return g
        return None

    def can_declassify(self, pid: int, tag: int) -> bool:
        """Owner, minus-capability holder, or delegate of such an authority."""
        p = self.principals.get(pid)
        if p is None:
            return False
        if tag in p.caps.minus or self.tags.owner(tag) == pid:
            return True
        for grantor in self.delegations.grantors(pid, tag):
            g = self.principals.get(grantor)
            if g is not None and (tag in g.caps.minus or self.tags.owner(tag) == grantor):
                return True
        return False

    def _require_layout(self, pid: int, g: Guard) -> None:
        if not self.can_declassify(pid, g.secrecy_tag):
            raise PermissionDenied(f"principal {pid} cannot declassify guard {g.id}")

    def _grant_bitmaps(self, pid: int, tags: Iterable[int]) -> None:
        tags = set(tags)
        for g in self.guards.values():
            if g.secrecy_tag in tags:
                g.perms.grant_all(pid)

    # -- labels and capabilities ----------------------------------------

    @_atomic
    def alloc_tag(self, pid: int) -> int:
        p = self._running(pid)
        tag = self.tags.alloc(pid)
        p.caps.add(Capability(tag, plus=True, minus=True))
        return tag

    @_atomic
    def modify_label(self, pid: int, target: Iterable[int]) -> frozenset[int]:
        p = self._running(pid)
        target = frozenset(target)
        if not validate_label_change(p.label, target, p.caps):
            raise PermissionDenied(f"principal {pid} lacks capabilities for label change")
        p.label = target
        return target

    @_atomic
    def transfer_caps(self, src: int, dst: int, caps: Iterable[Capability]) -> None:
        s = self._running(src)
        d = self._running(dst)
        caps = list(caps)
        for cap in caps:
            if cap.minus:
                raise InvalidCapability(f"minus capability {cap} cannot be transferred; use a grant")
        for cap in caps:
            if not s.caps.holds(cap):
                raise PermissionDenied(f"principal {src} does not hold {cap}")
        d.caps.add_all(caps)
        self._grant_bitmaps(dst, (c.tag for c in caps))

    @_atomic
    def declassify(self, pid: int, tag: int) -> None:
        p = self._running(pid)
        if not self.can_declassify(pid, tag):
            raise PermissionDenied(f"principal {pid} is not an authority for tag {tag}")
        p.label = p.label - {tag}

    @_atomic
    def grant(self, authority: int, grantor: int, grantee: int, tag: int) -> None:
        self._running(authority)
        self.principal(grantor)
        self.principal(grantee)
        if not (tag in self.principals[authority].caps.minus or self.tags.owner(tag) == authority):
            raise PermissionDenied(f"principal {authority} does not hold {tag}-")
        self.delegations.add(grantor, grantee, tag)

    @_atomic
    def revoke_grant(self, authority: int, grantor: int, grantee: int, tag: int) -> None:
        self._running(authority)
        if not (tag in self.principals[authority].caps.minus or self.tags.owner(tag) == authority):
            raise PermissionDenied(f"principal {authority} does not hold {tag}-")
        self.delegations.remove(grantor, grantee, tag)

    # -- principals -------------------------------------------------------

    def _new_principal(self, parent: int, label: frozenset[int], caps: CapSet) -> int:
        pid = self.next_principal
        self.next_principal += 1
        self.principals[pid] = Principal(pid, label, caps, parent)
        self._grant_bitmaps(pid, caps.plus)
        return pid

    @_atomic
    def clone(self, parent: int, label: Iterable[int] = (), caps: Iterable[Capability] = ()) -> int:
        p = self._running(parent)
        label = frozenset(label)
        caps = list(caps)
        for cap in caps:
            if not p.caps.holds(cap):
                raise PermissionDenied(f"parent {parent} does not hold {cap}")
        passed = CapSet.of(caps)
        if not validate_label_change(frozenset(), label, passed):
            raise PermissionDenied("passed label is not reachable with the passed capabilities")
        return self._new_principal(parent, label, passed)

    @_atomic
    def fork(self, parent: int) -> int:
        """POSIX fork analogue: the child never inherits labels or capabilities."""
        self._running(parent)
        return self._new_principal(parent, frozenset(), CapSet())

    @_atomic
    def exit(self, pid: int) -> None:
        p = self._running(pid)
        p.exit = NORMAL_EXIT
        self._exited.notify_all()

    def join(self, waiter: int, target: int, block: bool = True, timeout: float | None = None) -> ExitStatus | None:
        with self._lock:
            self._running(waiter)
            t = self.principal(target)
            if t.exit is not None or not block:
                return t.exit
            self._exited.wait_for(lambda: t.exit is not None, timeout)
            return t.exit

    @_atomic
    def lock(self, pid: int, gid: int) -> None:
        p = self._running(pid)
        g = self._guard(gid)
        if g.secrecy_tag not in p.caps.plus:
            raise PermissionDenied(f"principal {pid} lacks {g.secrecy_tag}+")
        if g.locked:
            raise AlreadyLocked(f"guard {gid} is locked by principal {self.locks[gid]}")
        g.saved_tag, g.tag = g.tag, LOCK_TAG
        self.locks[gid] = pid

    @_atomic
    def unlock(self, pid: int, gid: int) -> None:
        p = self._running(pid)
        g = self._guard(gid)
        if not g.locked:
            raise NotLocked(f"guard {gid} is not locked")
        if self.locks[gid] != pid and g.secrecy_tag not in p.caps.minus:
            raise PermissionDenied(f"principal {pid} neither locked guard {gid} nor holds its minus capability")
        g.tag, g.saved_tag = g.saved_tag, None
        del self.locks[gid]

    # -- guards -------------------------------------------------------------

    @_atomic
    def create_guard(self, pid: int, backing: Backing | str | None = None) -> int:
        p = self._running(pid)
        backing = self.backing if backing is None else Backing(backing)
        if len(self.guards) >= self.max_guards:
            raise GuardLimitExceeded(f"{self.max_guards} guards already live")
        tag = self.tags.alloc(pid)
        gid = self.next_guard
        self.next_guard += 1
        g = Guard(gid, tag, pid, backing)
        g.perms.grant_all(pid)
        self.guards[gid] = g
        p.caps.add(Capability(tag, plus=True, minus=True))
        p.label = p.label | {tag}
        return gid

    @_atomic
    def destroy_guard(self, pid: int, gid: int) -> None:
        self._running(pid)
        g = self._guard(gid)
        if g.owner != pid:
            raise PermissionDenied(f"only the owner may destroy guard {gid}")
        if g.locked:
            raise GuardLocked(f"guard {gid} is locked")
        if g.mapped:
            self._unmap(g)
        elif g.id in self.engine.residency or g.id in self.engine.spill:
            self.engine.detach(g.id)
        del self.guards[gid]

    def _park(self, gid: int) -> None:
        # the victim's first-level entry stops naming the reused domain
        g = self.guards.get(gid)
        if g is None or not g.pages:
            return
        for e in g.pages.values():
            e.domain = None
        self.counters.pageTableWrites += 1
        self.counters.tlbFlushes += 1

    def _sync_domain(self, g: Guard, idx: int) -> None:
        for e in g.pages.values():
            e.domain = idx

    def _attach(self, g: Guard, mode: AccessMode | None = None, program: bool = False) -> None:
        if program:
            idx = self.engine.program(g.id, mode)
        else:
            idx = self.engine.attach(g.id, mode)
        self._sync_domain(g, idx)

    @_atomic
    def map_pages(self, pid: int, gid: int, length: int, perm: PagePerm | str = PagePerm.RW) -> int:
        self._running(pid)
        g = self._guard(gid)
        perm = PagePerm.parse(perm) if isinstance(perm, str) else PagePerm(perm)
        self._require_layout(pid, g)
        if g.locked:
            raise GuardLocked(f"guard {gid} is locked")
        if length <= 0:
            raise ParseError("mapping length must be positive")
        if g.mapped:
            raise OutOfAddressSpace(f"guard {gid} already holds its page group")
        length = page_round(length)
        base = self.space.reserve(length)
        g.base, g.length, g.perm = base, length, perm
        g.data = bytearray(length)
        first = base // PAGE_SIZE
        g.pages = {first + i: PageEntry(True, perm) for i in range(length // PAGE_SIZE)}
        self.counters.pageTableWrites += len(g.pages)
        self.heaps[gid] = GuardHeap(length)
        if g.backing == Backing.MD:
            self._attach(g, mode_for(perm))
        return base

    def _unmap(self, g: Guard) -> None:
        n = len(g.pages)
        if g.backing == Backing.MD:
            self.engine.detach(g.id)
        elif g.backing == Backing.MTE:
            self.engine.granules.clear_region(g.base, g.length)
            for addr in [a for a in self.pointer_tags if g.contains(a)]:
                del self.pointer_tags[addr]
        self.space.release(g.base)
        self.heaps.pop(g.id, None)
        g.pages = {}
        g.base, g.length, g.perm = None, 0, PagePerm.NONE
        g.data = bytearray()
        self.counters.pageTableWrites += n
        self.counters.tlbFlushes += 1

    @_atomic
    def unmap_guard(self, pid: int, gid: int) -> None:
        self._running(pid)
        g = self._guard(gid)
        self._require_layout(pid, g)
        if g.locked:
            raise GuardLocked(f"guard {gid} is locked")
        if not g.mapped:
            raise NoSuchGuard(f"guard {gid} has no mapping")
        self._unmap(g)

    @_atomic
    def set_protection(self, pid: int, gid: int, perm: PagePerm | str) -> None:
        self._running(pid)
        g = self._guard(gid)
        perm = PagePerm.parse(perm) if isinstance(perm, str) else PagePerm(perm)
        self._require_layout(pid, g)
        if g.locked:
            raise GuardLocked(f"guard {gid} is locked")
        g.perm = perm
        if not g.mapped:
            return
        if g.backing == Backing.MD and perm in FAST_PATH_PERMS:
            self._attach(g, mode_for(perm), program=True)
            return
        for e in g.pages.values():
            e.perm = perm
        self.counters.pageTableWrites += len(g.pages)
        self.counters.tlbFlushes += 1
        if g.backing == Backing.MD and self.engine.mode_of(g.id) != AccessMode.CLIENT:
            self._attach(g, AccessMode.CLIENT, program=True)

    def get_protection(self, gid: int) -> PagePerm:
        with self._lock:
            return self._guard(gid).perm

    # -- enforcement --------------------------------------------------------

    def evaluate(self, pid: int, pointer: int, kind: AccessKind, size: int = 1):
        """Side-effect free verdict: ``None`` or (cause, guard id, address)."""
        p = self.principals[pid]
        address, ptag = strip_tag(pointer)
        end = address + max(size, 1)
        pos = address
        g = None
        while pos < end:
            if g is None or not g.contains(pos):
                g = self.guard_at(pos)
            entry = g.page_of(pos) if g is not None else None
            if g is None or entry is None or not entry.present:
                return FaultCause.PAGE_PERM, (g.id if g else None), pos
            if g.locked:
                return FaultCause.LOCKED, g.id, pos
            tag = g.secrecy_tag
            if not check_flow({tag}, p.label) or tag not in p.caps.plus:
                return FaultCause.LABEL, g.id, pos
            if not g.perm.admits(kind):
                return FaultCause.PAGE_PERM, g.id, pos
            if g.backing == Backing.MD:
                verdict = dacr_check(self.engine.mode_of(g.id), entry.perm, kind)
                if verdict == DacrVerdict.DOMAIN_FAULT:
                    return FaultCause.DOMAIN, g.id, pos
                if verdict == DacrVerdict.PAGE_FAULT:
                    return FaultCause.PAGE_PERM, g.id, pos
            elif g.backing == Backing.MTE:
                if not self.engine.mte_check(ptag, pos):
                    return FaultCause.TAG_MISMATCH, g.id, pos
            pos = (pos // GRANULE + 1) * GRANULE
        return None

    @_atomic
    def access(self, pid: int, pointer: int, kind: AccessKind | str, size: int = 1) -> FaultRecord | None:
        """Check an access; returns ``None`` when allowed, else the fault record."""
        self._running(pid)
        kind = AccessKind(kind)
        denied = self.evaluate(pid, pointer, kind, size)
        if denied is not None:
            cause, gid, addr = denied
            return self.handle_fault(pid, gid, addr, kind, cause)
        address, _ = strip_tag(pointer)
        g = self.guard_at(address)
        if g is not None and g.backing == Backing.MD:
            self._attach(g)  # refresh recency, restoring if spilled
        return None

    def read(self, pid: int, pointer: int, size: int = 1) -> bytes | FaultRecord:
        with self._lock:
            fault = self.access(pid, pointer, AccessKind.READ, size)
            if fault is not None:
                return fault
            address, _ = strip_tag(pointer)
            g = self.guard_at(address)
            off = address - g.base
            return bytes(g.data[off : off + size])

    def write(self, pid: int, pointer: int, data: bytes) -> FaultRecord | None:
        with self._lock:
            fault = self.access(pid, pointer, AccessKind.WRITE, len(data))
            if fault is not None:
                return fault
            address, _ = strip_tag(pointer)
            end = address + len(data)
            pos = address
            # a write may legally span adjacent guards
            while pos < end:
                g = self.guard_at(pos)
                stop = min(end, g.base + g.length)
                g.data[pos - g.base : stop - g.base] = data[pos - address : stop - address]
                pos = stop
            return None

    @_atomic
    def handle_fault(self, pid: int, gid: int | None, address: int, kind: AccessKind, cause: FaultCause) -> FaultRecord:
        seq = len(self.faults) + 1
        record = FaultRecord(seq, pid, gid, address, AccessKind(kind), FaultCause(cause))
        self.faults.append(record)
        self.principals[pid].exit = ExitStatus("fault", seq)
        self._exited.notify_all()
        return record

    # -- allocator ----------------------------------------------------------

    def _require_alloc(self, pid: int, g: Guard) -> None:
        p = self.principals[pid]
        if not g.perms.allows_alloc(pid):
            raise PermissionDenied(f"principal {pid} is not in guard {g.id}'s allocate bitmap")
        tag = g.secrecy_tag
        if tag not in p.caps.plus or tag not in p.label:
            raise PermissionDenied(f"principal {pid} does not carry tag {tag}")
        if g.locked:
            raise GuardLocked(f"guard {g.id} is locked")

    def _pick_tag(self, exclude: set[int]) -> int:
        if self.retag_policy == "random":
            return self.rng.randint(1, 15)
        choices = [t for t in range(1, 16) if t not in exclude]
        return self.rng.choice(choices)

    def _neighbour_tags(self, g: Guard, heap: GuardHeap, offset: int, size: int) -> set[int]:
        tags = set()
        for n in heap.neighbours(offset, size):
            if n is not None:
                tags.add(self.engine.granules.tag_at(g.base + n))
        return tags

    @_atomic
    def guard_alloc(self, pid: int, gid: int, size: int) -> int:
        self._running(pid)
        g = self._guard(gid)
        self._require_alloc(pid, g)
        heap = self.heaps.get(gid)
        if heap is None:
            raise OutOfGuardMemory(f"guard {gid} has no mapped heap")
        if size <= 0:
            raise ParseError("allocation size must be positive")
        offset = heap.alloc(size)
        address = g.base + offset
        if g.backing != Backing.MTE:
            return address
        n = heap.block_size(offset)
        tag = self._pick_tag(self._neighbour_tags(g, heap, offset, n))
        self.engine.mte_tag_region(address, n, tag)
        self.pointer_tags[address] = tag
        return with_tag(address, tag)

    @_atomic
    def guard_free(self, pid: int, gid: int, pointer: int) -> None:
        self._running(pid)
        g = self._guard(gid)
        self._require_alloc(pid, g)
        heap = self.heaps.get(gid)
        address, _ = strip_tag(pointer)
        if heap is None or not g.contains(address) or heap.block_size(address - g.base) is None:
            raise InvalidFree(f"0x{address:x} is not a live block of guard {gid}")
        offset = address - g.base
        n = heap.free(offset)
        if g.backing == Backing.MTE:
            old = self.pointer_tags.pop(address, self.engine.granules.tag_at(address))
            exclude = {old} | self._neighbour_tags(g, heap, offset, n)
            self.engine.mte_tag_region(address, n, self._pick_tag(exclude))

    # -- scheduling hooks ---------------------------------------------------

    def owns_md_guard(self, pid: int) -> bool:
        return any(g.owner == pid and g.backing == Backing.MD for g in self.guards.values())

    @_atomic
    def context_switch(self, src: int, dst: int) -> None:
        self.engine.context_switch(self.owns_md_guard(src) or self.owns_md_guard(dst))

    # -- plain POSIX surface ------------------------------------------------

    @_atomic
    def posix_mmap(self, pid: int, length: int, at: int | None = None, perm: PagePerm = PagePerm.RW) -> int:
        self._running(pid)
        length = page_round(length)
        if at is not None:
            start = at - at % PAGE_SIZE
            for g in self.guards.values():
                if g.mapped and start < g.base + g.length and g.base < start + length:
                    raise PermissionDenied(f"range 0x{start:x}+{length} overlaps guard {g.id}")
            at = start
        base = self.space.reserve(length, at)
        self.plain[base] = (length, PagePerm(perm))
        return base

    @_atomic
    def posix_mprotect(self, pid: int, address: int, length: int, perm: PagePerm) -> None:
        self._running(pid)
        start = address - address % PAGE_SIZE
        end = start + page_round(length + address - start)
        for g in self.guards.values():
            if g.mapped and start < g.base + g.length and g.base < end:
                raise PermissionDenied(f"plain mprotect over guard {g.id}")
        hit = [b for b, (n, _) in self.plain.items() if start < b + n and b < end]
        if not hit:
            raise PermissionDenied(f"no plain mapping at 0x{address:x}")
        for b in hit:
            self.plain[b] = (self.plain[b][0], PagePerm(perm))

    # -- introspection ------------------------------------------------------

    def snapshot(self, include_data: bool = True) -> dict:
        """Plain-data image of the whole state, usable by the access oracle."""
        with self._lock:
            eng = self.engine
            return {
                "principals": {
                    pid: {
                        "label": sorted(p.label),
                        "plus": sorted(p.caps.plus),
                        "minus": sorted(p.caps.minus),
                        "parent": p.parent,
                        "exit": None if p.exit is None else str(p.exit),
                    }
                    for pid, p in self.principals.items()
                },
                "next_principal": self.next_principal,
                "tags": {"next": self.tags.next_tag, "owners": dict(self.tags.owners)},
                "delegations": sorted(self.delegations.edges),
                "locks": dict(self.locks),
                "next_guard": self.next_guard,
                "guards": {gid: self._guard_image(g, include_data) for gid, g in self.guards.items()},
                "plain": {b: [n, int(perm)] for b, (n, perm) in self.plain.items()},
                "domains": {
                    "dacr": eng.dacr.pack(),
                    "num_domains": eng.num_domains,
                    "reserved": eng.reserved,
                    "residency": [[gid, idx] for gid, idx in eng.residency.items()],
                    "spill": {gid: int(m) for gid, m in eng.spill.items()},
                },
                "granules": dict(eng.granules.tags),
                "pointer_tags": dict(self.pointer_tags),
                "counters": eng.counters.as_dict(),
                "faults": [f.to_line() for f in self.faults],
            }

    def _guard_image(self, g: Guard, include_data: bool) -> dict:
        heap = self.heaps.get(g.id)
        image = {
            "tag": g.tag,
            "saved_tag": g.saved_tag,
            "owner": g.owner,
            "backing": g.backing.value,
            "base": g.base,
            "length": g.length,
            "perm": int(g.perm),
            "bitmaps": list(g.perms.as_tuple()),
            "pages": {i: [e.present, int(e.perm), e.domain] for i, e in g.pages.items()},
            "heap": None if heap is None else heap.state(),
        }
        if include_data:
            image["data"] = bytes(g.data)
        return image

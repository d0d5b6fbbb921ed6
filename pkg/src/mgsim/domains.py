"""Hardware backing models: ARM memory domains (DACR) and MTE granule tags.

The domain engine multiplexes guards over the assignable DACR fields with an
LRU cache, and owns every performance event counter.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

from .errors import MisalignedRange, NoSuchGuard, ReservedIndex, ReservedMode
from .memory import GRANULE, AccessKind, PagePerm

NUM_DOMAINS = 16
RESERVED_DOMAINS = 2  # kernel + default user


class AccessMode(enum.IntEnum):
    NO_ACCESS = 0b00
    CLIENT = 0b01
    RESERVED = 0b10
    MANAGER = 0b11


class DacrVerdict(str, enum.Enum):
    ALLOWED = "allowed"
    DOMAIN_FAULT = "domain-fault"
    PAGE_FAULT = "page-fault"


def dacr_check(mode: AccessMode, page_perm: PagePerm, kind: AccessKind) -> DacrVerdict:
    if mode == AccessMode.MANAGER:
        return DacrVerdict.ALLOWED
    if mode == AccessMode.CLIENT:
        return DacrVerdict.ALLOWED if page_perm.admits(kind) else DacrVerdict.PAGE_FAULT
    # NoAccess, and Reserved fails closed
    return DacrVerdict.DOMAIN_FAULT


def mode_for(perm: PagePerm) -> AccessMode:
    """DACR mode realizing a uniform guard permission on md backing."""
    if perm == PagePerm.NONE:
        return AccessMode.NO_ACCESS
    if perm == PagePerm.RW:
        return AccessMode.MANAGER
    return AccessMode.CLIENT


FAST_PATH_PERMS = frozenset({PagePerm.NONE, PagePerm.RW})


class DacrRegister:
    def __init__(self, num: int = NUM_DOMAINS):
        self.fields = [AccessMode.NO_ACCESS] * num

    def pack(self) -> int:
        return sum(int(m) << (2 * i) for i, m in enumerate(self.fields))

    @classmethod
    def unpack(cls, image: int, num: int = NUM_DOMAINS) -> DacrRegister:
        reg = cls(num)
        reg.fields = [AccessMode((image >> (2 * i)) & 0b11) for i in range(num)]
        return reg


@dataclass
class EventCounters:
    dacrWrites: int = 0
    tlbFlushes: int = 0
    pageTableReloads: int = 0
    domainEvictions: int = 0
    domainRestores: int = 0
    contextSwitches: int = 0
    pageTableWrites: int = 0

    CSV_FIELDS = (
        "dacrWrites",
        "tlbFlushes",
        "pageTableReloads",
        "domainEvictions",
        "domainRestores",
        "contextSwitches",
    )

    def csv_row(self) -> str:
        return ",".join(str(getattr(self, f)) for f in self.CSV_FIELDS)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def copy(self) -> EventCounters:
        return EventCounters(**asdict(self))

    def delta(self, before: EventCounters) -> EventCounters:
        return EventCounters(**{f.name: getattr(self, f.name) - getattr(before, f.name) for f in fields(self)})

    def total(self) -> int:
        return sum(asdict(self).values())

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


class GranuleStore:
    """4-bit tags on 16-byte granules. Untagged granules read as tag 0."""

    def __init__(self):
        self.tags: dict[int, int] = {}

    def tag_region(self, base: int, length: int, tag: int) -> None:
        if base % GRANULE or length % GRANULE:
            raise MisalignedRange(f"0x{base:x}+{length} is not granule aligned")
        first = base // GRANULE
        for g in range(first, first + length // GRANULE):
            self.tags[g] = tag & 0xF

    def clear_region(self, base: int, length: int) -> None:
        first = base // GRANULE
        for g in range(first, first + -(-length // GRANULE)):
            self.tags.pop(g, None)

    def tag_at(self, address: int) -> int:
        return self.tags.get(address // GRANULE, 0)

    def check(self, pointer_tag: int, address: int) -> bool:
        return self.tag_at(address) == pointer_tag


class DomainEngine:
    def __init__(self, num_domains: int = NUM_DOMAINS, reserved: int = RESERVED_DOMAINS):
        if not reserved < num_domains <= NUM_DOMAINS:
            raise ValueError(f"need {reserved} < domains <= {NUM_DOMAINS}")
        self.num_domains = num_domains
        self.reserved = reserved
        self.dacr = DacrRegister()
        self.residency: OrderedDict[int, int] = OrderedDict()  # LRU first
        self.spill: dict[int, AccessMode] = {}
        self.counters = EventCounters()
        self.granules = GranuleStore()
        self.on_evict = None  # callback(guard) after a victim loses its domain

    @property
    def capacity(self) -> int:
        return self.num_domains - self.reserved

    def _free_index(self) -> int | None:
        used = set(self.residency.values())
        for i in range(self.reserved, self.num_domains):
            if i not in used:
                return i
        return None

    def attach(self, guard: int, mode: AccessMode | None = None) -> int:
        """Give ``guard`` a domain, evicting the least recently used one if full."""
        if guard in self.residency:
            self.residency.move_to_end(guard)
            idx = self.residency[guard]
            if mode is not None and self.dacr.fields[idx] != mode:
                self.dacr.fields[idx] = mode
                self.counters.dacrWrites += 1
            return idx
        restoring = guard in self.spill
        saved = self.spill.pop(guard, AccessMode.NO_ACCESS)
        if mode is None:
            mode = saved
        idx = self._free_index()
        if idx is None:
            victim, idx = self.residency.popitem(last=False)
            self.spill[victim] = self.dacr.fields[idx]
            self.counters.domainEvictions += 1
            if self.on_evict is not None:
                self.on_evict(victim)
        self.dacr.fields[idx] = mode
        self.counters.dacrWrites += 1
        if restoring:
            self.counters.domainRestores += 1
        self.residency[guard] = idx
        return idx

    def program(self, guard: int, mode: AccessMode) -> int:
        """Set a guard's access mode with exactly one DACR write."""
        if guard in self.residency:
            self.residency.move_to_end(guard)
            idx = self.residency[guard]
            self.dacr.fields[idx] = mode
            self.counters.dacrWrites += 1
            return idx
        return self.attach(guard, mode)

    def detach(self, guard: int) -> None:
        if guard in self.residency:
            idx = self.residency.pop(guard)
            self.dacr.fields[idx] = AccessMode.NO_ACCESS
            self.counters.dacrWrites += 1
        elif guard in self.spill:
            del self.spill[guard]
        else:
            raise NoSuchGuard(f"guard {guard} holds no domain")

    def evict(self, guard: int) -> None:
        """Force ``guard`` out of its domain, saving its mode to the spill."""
        idx = self.residency.pop(guard)
        self.spill[guard] = self.dacr.fields[idx]
        self.dacr.fields[idx] = AccessMode.NO_ACCESS
        self.counters.domainEvictions += 1
        if self.on_evict is not None:
            self.on_evict(guard)

    def set_dacr(self, index: int, mode: AccessMode) -> None:
        if not self.reserved <= index < self.num_domains:
            raise ReservedIndex(f"domain {index} is reserved or out of range")
        mode = AccessMode(mode)
        if mode == AccessMode.RESERVED:
            raise ReservedMode("refusing to program the reserved DACR mode")
        self.dacr.fields[index] = mode
        self.counters.dacrWrites += 1

    def mode_of(self, guard: int) -> AccessMode | None:
        if guard in self.residency:
            return self.dacr.fields[self.residency[guard]]
        return self.spill.get(guard)

    def index_of(self, guard: int) -> int | None:
        return self.residency.get(guard)

    def lru_order(self) -> list[int]:
        return list(self.residency)

    def context_switch(self, involves_guard_owner: bool) -> None:
        self.counters.contextSwitches += 1
        if involves_guard_owner:
            self.counters.pageTableReloads += 1
            self.counters.tlbFlushes += 1

    def mte_tag_region(self, base: int, length: int, tag: int) -> None:
        self.granules.tag_region(base, length, tag)

    def mte_check(self, pointer_tag: int, address: int) -> bool:
        return self.granules.check(pointer_tag, address)

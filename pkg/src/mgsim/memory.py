"""Guard objects, page tables and the simulated 32-bit address space."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import OutOfAddressSpace

PAGE_SIZE = 4096
GRANULE = 16
ADDRESS_LIMIT = 1 << 32
DEFAULT_BASE = 0x1000_0000
# pointer tags ride in the top byte, as with top-byte-ignore
POINTER_TAG_SHIFT = 56
ADDRESS_MASK = (1 << POINTER_TAG_SHIFT) - 1


class PagePerm(enum.IntEnum):
    NONE = 0
    RO = 1
    WO = 2
    RW = 3
    EO = 4
    RX = 5
    RWX = 7

    def admits(self, kind: AccessKind) -> bool:
        return bool(self & _KIND_BIT.get(kind, 0))

    @classmethod
    def parse(cls, text: str) -> PagePerm:
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown page permission {text!r}") from None


class AccessKind(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"
    LAYOUT = "layout"


_KIND_BIT = {AccessKind.READ: 1, AccessKind.WRITE: 2, AccessKind.EXECUTE: 4}


class Backing(str, enum.Enum):
    MD = "md"
    MTE = "mte"
    PLAIN = "plain"


class FaultCause(str, enum.Enum):
    DOMAIN = "domain-fault"
    PAGE_PERM = "page-perm"
    LOCKED = "locked"
    LABEL = "label"
    TAG_MISMATCH = "tag-mismatch"


@dataclass(frozen=True)
class FaultRecord:
    seq: int
    principal: int
    guard: int | None
    address: int
    kind: AccessKind
    cause: FaultCause

    def to_line(self) -> str:
        guard = "-" if self.guard is None else str(self.guard)
        return f"{self.seq} {self.principal} {guard} 0x{self.address:08x} {self.kind.value} {self.cause.value}"

    @classmethod
    def from_line(cls, line: str) -> FaultRecord:
        seq, principal, guard, address, kind, cause = line.split()
        return cls(
            int(seq),
            int(principal),
            None if guard == "-" else int(guard),
            int(address, 16),
            AccessKind(kind),
            FaultCause(cause),
        )


@dataclass
class PageEntry:
    present: bool
    perm: PagePerm
    domain: int | None = None


@dataclass
class PermBitmaps:
    """Read/Write/Execute/Allocate bitmaps indexed by principal slot."""

    read: int = 0
    write: int = 0
    execute: int = 0
    allocate: int = 0

    def grant_all(self, slot: int) -> None:
        bit = 1 << slot
        self.read |= bit
        self.write |= bit
        self.execute |= bit
        self.allocate |= bit

    def allows_alloc(self, slot: int) -> bool:
        return bool(self.allocate >> slot & 1)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.read, self.write, self.execute, self.allocate)


@dataclass
class Guard:
    id: int
    tag: int
    owner: int
    backing: Backing
    base: int | None = None
    length: int = 0
    perm: PagePerm = PagePerm.NONE
    perms: PermBitmaps = field(default_factory=PermBitmaps)
    pages: dict[int, PageEntry] = field(default_factory=dict)
    saved_tag: int | None = None  # set while locked
    data: bytearray = field(default_factory=bytearray)

    @property
    def secrecy_tag(self) -> int:
        """The guard's real tag, even while the lock tag is swapped in."""
        return self.tag if self.saved_tag is None else self.saved_tag

    @property
    def locked(self) -> bool:
        return self.saved_tag is not None

    @property
    def mapped(self) -> bool:
        return self.base is not None

    def contains(self, address: int) -> bool:
        return self.base is not None and self.base <= address < self.base + self.length

    def page_of(self, address: int) -> PageEntry | None:
        return self.pages.get(address // PAGE_SIZE)


def page_round(length: int) -> int:
    return -(-length // PAGE_SIZE) * PAGE_SIZE


def strip_tag(pointer: int) -> tuple[int, int]:
    """Split a tagged pointer into (address, 4-bit pointer tag)."""
    return pointer & ADDRESS_MASK, (pointer >> POINTER_TAG_SHIFT) & 0xF


def with_tag(address: int, tag: int) -> int:
    return address | (tag << POINTER_TAG_SHIFT)


class AddressSpace:
    """First-fit reservation of page-aligned ranges in a 32-bit space."""

    def __init__(self, base: int = DEFAULT_BASE, limit: int = ADDRESS_LIMIT):
        if base % PAGE_SIZE:
            raise ValueError("address space base must be page aligned")
        self.base = base
        self.limit = limit
        self.ranges: dict[int, int] = {}  # start -> length

    def overlaps(self, start: int, length: int) -> int | None:
        for s, n in self.ranges.items():
            if s < start + length and start < s + n:
                return s
        return None

    def find(self, length: int) -> int:
        cursor = self.base
        for s in sorted(self.ranges):
            if s - cursor >= length:
                return cursor
            cursor = max(cursor, s + self.ranges[s])
        if self.limit - cursor >= length:
            return cursor
        raise OutOfAddressSpace(f"no free range of {length} bytes")

    def reserve(self, length: int, at: int | None = None) -> int:
        start = self.find(length) if at is None else at
        if start < self.base or start + length > self.limit:
            raise OutOfAddressSpace(f"range 0x{start:x}+{length} outside the address space")
        if self.overlaps(start, length) is not None:
            raise OutOfAddressSpace(f"range 0x{start:x}+{length} already reserved")
        self.ranges[start] = length
        return start

    def release(self, start: int) -> None:
        del self.ranges[start]

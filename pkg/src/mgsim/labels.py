"""Tags and capabilities, plus the flow and label-change rules.

A tag is a 30-bit identity.  When a capability is stored as a 32-bit word
the two top bits carry the plus (bit 31) and minus (bit 30) flags.
Labels are plain frozensets of tag identities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Iterator

from .errors import InvalidCapability, NoSuchEdge, TagSpaceExhausted

TAG_BITS = 30
TAG_MASK = (1 << TAG_BITS) - 1
PLUS_BIT = 1 << 31
MINUS_BIT = 1 << 30
MAX_TAG = TAG_MASK  # 2**30 - 1 usable identities, 0 reserved
RESERVED_TAG = 0

Label = frozenset  # frozenset[int]
EMPTY_LABEL: frozenset[int] = frozenset()


@dataclass(frozen=True, order=True)
class Capability:
    tag: int
    plus: bool = False
    minus: bool = False

    def __post_init__(self):
        if not (self.plus or self.minus):
            raise InvalidCapability(f"capability for tag {self.tag} has no flag set")
        if not 0 <= self.tag <= TAG_MASK:
            raise InvalidCapability(f"tag {self.tag} outside the 30-bit identity space")

    def encode(self) -> int:
        return self.tag | (PLUS_BIT if self.plus else 0) | (MINUS_BIT if self.minus else 0)

    @classmethod
    def decode(cls, word: int) -> Capability:
        return cls(word & TAG_MASK, plus=bool(word & PLUS_BIT), minus=bool(word & MINUS_BIT))

    def __str__(self) -> str:
        return f"{self.tag}{'+' if self.plus else ''}{'-' if self.minus else ''}"


def plus(tag: int) -> Capability:
    return Capability(tag, plus=True)


def minus(tag: int) -> Capability:
    return Capability(tag, minus=True)


@dataclass
class CapSet:
    """A principal's capability list, kept as its plus and minus views."""

    plus: set[int] = field(default_factory=set)
    minus: set[int] = field(default_factory=set)

    @classmethod
    def of(cls, caps: Iterable[Capability]) -> CapSet:
        cs = cls()
        cs.add_all(caps)
        return cs

    def add(self, cap: Capability) -> None:
        if cap.plus:
            self.plus.add(cap.tag)
        if cap.minus:
            self.minus.add(cap.tag)

    def add_all(self, caps: Iterable[Capability]) -> None:
        for cap in caps:
            self.add(cap)

    def holds(self, cap: Capability) -> bool:
        return (not cap.plus or cap.tag in self.plus) and (not cap.minus or cap.tag in self.minus)

    def caps(self) -> Iterator[Capability]:
        for tag in sorted(self.plus | self.minus):
            yield Capability(tag, plus=tag in self.plus, minus=tag in self.minus)

    def encoded(self) -> list[int]:
        return [c.encode() for c in self.caps()]

    def copy(self) -> CapSet:
        return CapSet(set(self.plus), set(self.minus))

    def __len__(self) -> int:
        return len(self.plus) + len(self.minus)


def check_flow(src: AbstractSet[int], dst: AbstractSet[int]) -> bool:
    """Information may flow from ``src`` to ``dst`` iff src is a subset of dst."""
    return src <= dst


def validate_label_change(
    current: AbstractSet[int], target: AbstractSet[int], caps: CapSet
) -> bool:
    added = set(target) - set(current)
    dropped = set(current) - set(target)
    return added <= caps.plus and dropped <= caps.minus


class TagRegistry:
    """Issues tag identities sequentially from 1; identities are never reissued."""

    def __init__(self, limit: int = MAX_TAG):
        self.limit = limit
        self.next_tag = 1
        self.owners: dict[int, int] = {}

    def alloc(self, owner: int) -> int:
        if self.next_tag > self.limit:
            raise TagSpaceExhausted(f"all {self.limit} tag identities consumed")
        tag = self.next_tag
        self.next_tag += 1
        self.owners[tag] = owner
        return tag

    def owner(self, tag: int) -> int | None:
        return self.owners.get(tag)


@dataclass
class DelegationGraph:
    """Acts-for edges scoped per tag: (grantor, grantee, tag)."""

    edges: set[tuple[int, int, int]] = field(default_factory=set)

    def add(self, grantor: int, grantee: int, tag: int) -> None:
        self.edges.add((grantor, grantee, tag))

    def remove(self, grantor: int, grantee: int, tag: int) -> None:
        try:
            self.edges.remove((grantor, grantee, tag))
        except KeyError:
            raise NoSuchEdge(f"no delegation {grantor} -> {grantee} for tag {tag}") from None

    def grantors(self, grantee: int, tag: int) -> list[int]:
        return sorted(g for g, p, t in self.edges if p == grantee and t == tag)

    def __contains__(self, edge: tuple[int, int, int]) -> bool:
        return edge in self.edges


def format_label(label: Iterable[int]) -> str:
    return "{" + ",".join(str(t) for t in sorted(label)) + "}"

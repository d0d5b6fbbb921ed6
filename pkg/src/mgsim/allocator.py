"""Head/tail free-list heap living inside one guard's range.

Free blocks starting in the lower half of the heap sit on the head list,
the rest on the tail list.  Allocation is first-fit over the head list
(lowest address, carved from the block start), falling back to the tail
list searched from the top (carved from the block end).  Free blocks are
coalesced with their neighbours on free.
"""
from __future__ import annotations

import bisect

from .errors import InvalidFree, OutOfGuardMemory
from .memory import GRANULE


def round_block(size: int) -> int:
    return max(GRANULE, -(-size // GRANULE) * GRANULE)


class GuardHeap:
    def __init__(self, length: int):
        if length <= 0 or length % GRANULE:
            raise ValueError("heap length must be a positive multiple of 16")
        self.length = length
        self.midpoint = (length // 2) // GRANULE * GRANULE
        self.head: list[tuple[int, int]] = []
        self.tail: list[tuple[int, int]] = []
        self.live: dict[int, int] = {}
        self._partition([(0, length)])

    def _partition(self, blocks: list[tuple[int, int]]) -> None:
        self.head = [b for b in blocks if b[0] < self.midpoint]
        self.tail = [b for b in blocks if b[0] >= self.midpoint]

    def free_blocks(self) -> list[tuple[int, int]]:
        return self.head + self.tail

    def alloc(self, size: int) -> int:
        if size <= 0:
            raise ValueError("allocation size must be positive")
        n = round_block(size)
        blocks = self.free_blocks()
        for i, (off, sz) in enumerate(blocks):
            if off >= self.midpoint:
                break
            if sz >= n:
                blocks[i : i + 1] = [(off + n, sz - n)] if sz > n else []
                self._partition(blocks)
                self.live[off] = n
                return off
        for i in range(len(blocks) - 1, -1, -1):
            off, sz = blocks[i]
            if off < self.midpoint:
                break
            if sz >= n:
                at = off + sz - n
                blocks[i : i + 1] = [(off, sz - n)] if sz > n else []
                self._partition(blocks)
                self.live[at] = n
                return at
        raise OutOfGuardMemory(f"no free block of {n} bytes in a {self.length}-byte heap")

    def free(self, offset: int) -> int:
        try:
            size = self.live.pop(offset)
        except KeyError:
            raise InvalidFree(f"offset {offset} is not a live block") from None
        blocks = self.free_blocks()
        i = bisect.bisect_left(blocks, (offset, 0))
        start, end = offset, offset + size
        if i < len(blocks) and blocks[i][0] == end:
            end += blocks[i][1]
            del blocks[i]
        if i > 0 and sum(blocks[i - 1]) == start:
            start = blocks[i - 1][0]
            del blocks[i - 1]
            i -= 1
        blocks.insert(i, (start, end - start))
        self._partition(blocks)
        return size

    def block_size(self, offset: int) -> int | None:
        return self.live.get(offset)

    def neighbours(self, offset: int, size: int) -> tuple[int | None, int | None]:
        """Offsets of the granules just before and after a block, if inside the heap."""
        before = offset - GRANULE if offset > 0 else None
        after = offset + size if offset + size < self.length else None
        return before, after

    def free_bytes(self) -> int:
        return sum(sz for _, sz in self.free_blocks())

    def live_bytes(self) -> int:
        return sum(self.live.values())

    def state(self) -> tuple:
        return (self.length, tuple(self.head), tuple(self.tail), tuple(sorted(self.live.items())))

    def check_invariants(self) -> None:
        spans = sorted(self.free_blocks() + list(self.live.items()))
        cursor = 0
        for off, sz in spans:
            assert off == cursor, f"gap or overlap at {off} (expected {cursor})"
            assert off % GRANULE == 0 and sz % GRANULE == 0 and sz > 0
            cursor = off + sz
        assert cursor == self.length
        blocks = self.free_blocks()
        for (a, s), (b, _) in zip(blocks, blocks[1:]):
            assert a + s < b, f"uncoalesced free blocks at {a} and {b}"
        assert all(o < self.midpoint for o, _ in self.head)
        assert all(o >= self.midpoint for o, _ in self.tail)

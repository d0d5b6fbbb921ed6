import random

import pytest

from mgsim import Kernel
from mgsim.allocator import GuardHeap, round_block
from mgsim.errors import GuardLocked, InvalidFree, OutOfGuardMemory, PermissionDenied
from mgsim.labels import plus
from refalloc import BitmapAllocator

MAIN = 0


def run_tape(length, steps, seed):
    """Drive both allocators with one random tape; returns the step count checked."""
    rng = random.Random(seed)
    heap, ref = GuardHeap(length), BitmapAllocator(length)
    live = []
    for _ in range(steps):
        if live and rng.random() < 0.45:
            off = live.pop(rng.randrange(len(live)))
            heap.free(off)
            assert ref.free(off)
        else:
            size = rng.choice([1, 8, 16, 17, 32, 100, 256, 1000, 4096, rng.randint(1, 3000)])
            want = ref.alloc(size)
            try:
                got = heap.alloc(size)
            except OutOfGuardMemory:
                got = None
            assert got == want
            if got is not None:
                live.append(got)
        heap.check_invariants()
        assert heap.free_bytes() + heap.live_bytes() == length
        assert heap.free_bytes() == ref.free_bytes()
    return steps


def test_differential_tape():
    assert run_tape(65536, 10_000, seed=1) == 10_000


@pytest.mark.parametrize("seed", range(5))
def test_differential_small_heaps(seed):
    run_tape(4096, 2000, seed)


def test_alloc_within_guard_and_aligned():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 65536)
    p = k.guard_alloc(MAIN, gid, 1024)
    assert base <= p <= base + 65536 - 1024 and p % 16 == 0
    with pytest.raises(OutOfGuardMemory):
        k.guard_alloc(MAIN, gid, 70000)


def test_free_conservation_and_double_free():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 8192)
    heap = k.heaps[gid]
    before = heap.free_bytes()
    p = k.guard_alloc(MAIN, gid, 48)
    k.guard_free(MAIN, gid, p)
    assert heap.free_bytes() == before
    assert k.guard_alloc(MAIN, gid, 48) == p
    k.guard_free(MAIN, gid, p)
    with pytest.raises(InvalidFree):
        k.guard_free(MAIN, gid, p)


def test_free_all_in_random_order_coalesces():
    rng = random.Random(9)
    heap = GuardHeap(65536)
    live = [heap.alloc(rng.randint(1, 900)) for _ in range(40)]
    rng.shuffle(live)
    for off in live:
        heap.free(off)
        heap.check_invariants()
    assert heap.free_blocks() == [(0, 65536)]


def test_head_and_tail_placement():
    heap = GuardHeap(4096)
    a = heap.alloc(2048)
    assert a == 0
    b = heap.alloc(1024)  # head list is empty now, so carve from the top
    assert b == 4096 - 1024
    assert heap.head == [] and heap.tail == [(2048, 1024)]


def test_round_block():
    assert [round_block(n) for n in (1, 16, 17, 32, 33)] == [16, 16, 32, 32, 48]


def test_alloc_gates():
    k = Kernel()
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 4096)
    tag = k.guard(gid).tag
    outsider = k.clone(MAIN)
    with pytest.raises(PermissionDenied):
        k.guard_alloc(outsider, gid, 16)
    helper = k.clone(MAIN, (), [plus(tag)])
    with pytest.raises(PermissionDenied):
        k.guard_alloc(helper, gid, 16)  # holds the capability but not the tag
    k.modify_label(helper, {tag})
    k.guard_alloc(helper, gid, 16)
    k.lock(MAIN, gid)
    with pytest.raises(GuardLocked):
        k.guard_alloc(MAIN, gid, 16)


def test_free_of_foreign_address():
    k = Kernel()
    gid = k.create_guard(MAIN)
    base = k.map_pages(MAIN, gid, 4096)
    with pytest.raises(InvalidFree):
        k.guard_free(MAIN, gid, base + 32)

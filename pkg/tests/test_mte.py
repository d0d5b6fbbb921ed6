import random

from mgsim import Kernel
from mgsim.memory import AccessKind, Backing, FaultCause, strip_tag

MAIN = 0


def mte_kernel(seed=0, retag="different"):
    k = Kernel(backing=Backing.MTE, seed=seed, retag_policy=retag)
    gid = k.create_guard(MAIN)
    k.map_pages(MAIN, gid, 16384)
    return k, gid


def test_pointer_carries_granule_tag():
    k, gid = mte_kernel()
    p = k.guard_alloc(MAIN, gid, 48)
    addr, tag = strip_tag(p)
    assert 1 <= tag <= 15
    assert all(k.engine.granules.tag_at(addr + o) == tag for o in range(0, 48, 16))
    assert k.access(MAIN, p, AccessKind.READ, 48) is None


def test_neighbours_get_different_tags():
    rng = random.Random(1)
    for s in range(200):
        k, gid = mte_kernel(seed=s)
        ptrs = [k.guard_alloc(MAIN, gid, rng.randint(1, 64)) for _ in range(20)]
        for p in ptrs:
            addr, tag = strip_tag(p)
            n = k.heaps[gid].block_size(addr - k.guard(gid).base)
            assert k.engine.granules.tag_at(addr + n) != tag or k.heaps[gid].block_size(addr + n - k.guard(gid).base) is None


def test_overread_one_granule_faults():
    k, gid = mte_kernel()
    p = k.guard_alloc(MAIN, gid, 32)
    k.guard_alloc(MAIN, gid, 32)
    rec = k.access(MAIN, p + 32, AccessKind.READ)
    assert rec.cause == FaultCause.TAG_MISMATCH


def test_in_bounds_always_allowed_cross_boundary_always_faults():
    rng = random.Random(4)
    for trial in range(300):
        k, gid = mte_kernel(seed=trial)
        for _ in range(rng.randint(0, 5)):
            k.guard_alloc(MAIN, gid, rng.randint(1, 100))
        size = rng.randint(1, 200)
        p = k.guard_alloc(MAIN, gid, size)
        n = k.heaps[gid].block_size(strip_tag(p)[0] - k.guard(gid).base)
        off = rng.randrange(n)
        assert k.evaluate(MAIN, p + off, AccessKind.READ, 1) is None
        cause = k.evaluate(MAIN, p, AccessKind.READ, n + 16)
        assert cause is not None and cause[0] == FaultCause.TAG_MISMATCH


def test_use_after_free_detected_with_different_policy():
    for s in range(200):
        k, gid = mte_kernel(seed=s)
        p = k.guard_alloc(MAIN, gid, 64)
        k.guard_free(MAIN, gid, p)
        assert k.evaluate(MAIN, p, AccessKind.READ)[0] == FaultCause.TAG_MISMATCH


def test_random_retag_rate_near_fourteen_fifteenths():
    hits = 0
    trials = 1500
    for s in range(trials):
        k, gid = mte_kernel(seed=s, retag="random")
        p = k.guard_alloc(MAIN, gid, 64)
        k.guard_free(MAIN, gid, p)
        hits += k.evaluate(MAIN, p, AccessKind.READ) is not None
    rate = hits / trials
    assert 0.9 <= rate < 0.99

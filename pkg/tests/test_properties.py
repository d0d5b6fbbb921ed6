from hypothesis import given, settings
from hypothesis import strategies as st

from mgsim import Kernel
from mgsim.allocator import GuardHeap
from mgsim.domains import DacrRegister
from mgsim.errors import ApiError, OutOfGuardMemory
from mgsim.labels import Capability, CapSet, check_flow, validate_label_change
from mgsim.memory import AccessKind, Backing, PagePerm
from mgsim.oracle import oracle_access
from refalloc import BitmapAllocator

tags = st.integers(min_value=1, max_value=12)
labels = st.frozensets(tags, max_size=6)


@given(labels, labels)
def test_flow_is_subset(a, b):
    assert check_flow(a, b) == a.issubset(b)
    assert check_flow(a, a | b)


@given(labels, labels, labels, labels)
def test_label_change_rule(cur, tgt, cp, cm):
    ok = validate_label_change(cur, tgt, CapSet(set(cp), set(cm)))
    assert ok == ((tgt - cur) <= cp and (cur - tgt) <= cm)
    assert validate_label_change(cur, cur, CapSet())


@given(st.integers(1, (1 << 30) - 1), st.sampled_from([(True, False), (False, True), (True, True)]))
def test_capability_encoding(tag, flags):
    cap = Capability(tag, *flags)
    assert Capability.decode(cap.encode()) == cap


@given(st.lists(st.integers(0, 3), min_size=16, max_size=16))
def test_dacr_unpack_pack(fields):
    image = sum(f << (2 * i) for i, f in enumerate(fields))
    assert DacrRegister.unpack(image).pack() == image


ops = st.lists(
    st.one_of(
        st.tuples(st.just("alloc"), st.integers(1, 3000)),
        st.tuples(st.just("free"), st.integers(0, 1000)),
    ),
    max_size=120,
)


@settings(max_examples=150)
@given(st.sampled_from([1024, 4096, 16384]), ops)
def test_heap_matches_reference(length, tape):
    heap, ref = GuardHeap(length), BitmapAllocator(length)
    live = []
    for op, arg in tape:
        if op == "alloc":
            want = ref.alloc(arg)
            try:
                got = heap.alloc(arg)
            except OutOfGuardMemory:
                got = None
            assert got == want
            if got is not None:
                live.append(got)
        elif live:
            off = live.pop(arg % len(live))
            heap.free(off)
            ref.free(off)
        heap.check_invariants()


actions = st.lists(
    st.tuples(
        st.sampled_from(["create", "map", "protect", "clone", "transfer", "label", "lock", "unlock", "alloc", "probe"]),
        st.integers(0, 5),
        st.integers(0, 5),
        st.sampled_from(list(PagePerm)),
    ),
    max_size=60,
)


@settings(max_examples=120, deadline=None)
@given(st.sampled_from(list(Backing)), actions)
def test_no_access_without_plus(backing, script):
    k = Kernel(backing=backing, domains=5)
    principals, guards, ptrs = [0], [], []
    for act, a, b, perm in script:
        pid = principals[a % len(principals)]
        gid = guards[b % len(guards)] if guards else None
        try:
            if act == "create":
                guards.append(k.create_guard(pid))
            elif act == "map" and gid:
                ptrs.append(k.map_pages(pid, gid, 4096 * (1 + a % 2), perm))
            elif act == "protect" and gid:
                k.set_protection(pid, gid, perm)
            elif act == "clone":
                principals.append(k.clone(pid))
            elif act == "transfer" and gid:
                k.transfer_caps(pid, principals[b % len(principals)], [Capability(k.guard(gid).tag, True, False)])
            elif act == "label" and gid:
                k.modify_label(pid, k.principal(pid).label | {k.guard(gid).tag})
            elif act == "lock" and gid:
                k.lock(pid, gid)
            elif act == "unlock" and gid:
                k.unlock(pid, gid)
            elif act == "alloc" and gid:
                ptrs.append(k.guard_alloc(pid, gid, 16 * (1 + a)))
            elif act == "probe" and ptrs and k.principal(pid).running:
                ptr = ptrs[b % len(ptrs)]
                kind = [AccessKind.READ, AccessKind.WRITE, AccessKind.EXECUTE][a % 3]
                expected = oracle_access(k.snapshot(False), pid, ptr, kind.value)
                g = k.guard_at(ptr & ((1 << 56) - 1))
                rec = k.access(pid, ptr, kind)
                assert (rec is None) == (expected == ("allowed", None))
                if rec is None:
                    assert g is not None and g.tag in k.principal(pid).caps.plus
        except ApiError:
            pass

"""Seeded random scenario generator for lockstep and property testing.

Scenarios stay small (at most 4 principals, 6 guards, 200 statements) and
are run leniently: API errors and faults are expected noise, the point is
to drive the kernel through many states while the oracle watches.
"""
from __future__ import annotations

import random

MAX_PRINCIPALS = 4
MAX_GUARDS = 6
MAX_STEPS = 200

_PERMS = ("NONE", "RO", "WO", "RW", "EO", "RX", "RWX")
_BACKINGS = ("md", "mte", "plain")
_GUARD_BACKINGS = ("md", "md", "md", "mte", "mte", "plain")


class _Gen:
    def __init__(self, rng: random.Random, max_steps: int, max_guards: int, max_principals: int):
        self.rng = rng
        self.max_steps = max_steps
        self.max_guards = max_guards
        self.threads = ["main"] + [f"t{i}" for i in range(1, rng.randint(1, max_principals))]
        self.blocks: dict[str, list[str]] = {t: [] for t in self.threads}
        self.spawned: set[str] = set()
        self.guards: list[str] = []
        self.ptrs: list[str] = []  # names bound to addresses
        self.ptr_guard: dict[str, str] = {}
        self.count = 0

    def _subset(self, pool: list[str], k: int | None = None) -> list[str]:
        if not pool:
            return []
        k = self.rng.randint(0, min(len(pool), 3)) if k is None else k
        return self.rng.sample(pool, k)

    def _caps(self, pool: list[str]) -> str:
        items = []
        for g in self._subset(pool):
            items.append(g + self.rng.choice(("+", "-", "+-")))
        return "{" + ", ".join(items) + "}"

    def _access(self) -> str:
        op = self.rng.choice(("read", "read", "read", "write", "write", "write", "exec"))
        r = self.rng.random()
        if self.ptrs and r < 0.95:
            name = self.rng.choice(self.ptrs)
            off = self.rng.choice((0, 0, 0, 0, 4, 8, 12, 16, 32, 48, 4096, self.rng.randrange(12288)))
            where = f"{name}+{off}" if off else name
        else:
            where = hex(0x1000_0000 + self.rng.randrange(0, 0x10000, 8))
        size = self.rng.choice((1, 1, 1, 4, 4, 8, 16, 17, 32))
        return f"{op} {where} {size}"

    def _call(self, thread: str) -> str | None:
        rng = self.rng
        others = [t for t in self.threads if t != thread and t in self.spawned | {"main"}]
        choice = rng.choices(
            ["create", "mmap", "malloc", "free", "protect", "lock", "unlock", "label",
             "transfer", "declassify", "grant", "revoke", "munmap", "kill", "tag", "get", "posix"],
            weights=[6, 6, 8, 3, 5, 3, 3, 3, 3, 2, 1, 1, 1, 1, 1, 1, 1],
        )[0]
        if choice == "create":
            if len(self.guards) >= self.max_guards:
                return None
            name = f"g{len(self.guards)}"
            self.guards.append(name)
            backing = rng.choice(("",) + _GUARD_BACKINGS)
            return f"{name} = mg_create({backing})"
        if not self.guards:
            return None
        g = rng.choice(self.guards)
        if choice == "mmap":
            name = f"b{self.count}"
            self.ptrs.append(name)
            self.ptr_guard[name] = g
            length = rng.choice((1, 4096, 4096, 8192, 12288))
            return f"{name} = mg_mmap({g}, {length}, {rng.choice(_PERMS)})"
        if choice == "malloc":
            name = f"p{self.count}"
            self.ptrs.append(name)
            self.ptr_guard[name] = g
            return f"{name} = mg_malloc({g}, {rng.choice((1, 8, 16, 24, 32, 64, 100, 256, 5000))})"
        if choice == "free":
            mine = [p for p in self.ptrs if p.startswith("p")]
            if not mine:
                return None
            p = rng.choice(mine)
            return f"mg_free({self.ptr_guard[p]}, {p})"
        if choice == "protect":
            return f"mg_mprotect({g}, {rng.choice(_PERMS + ('RW', 'RW'))})"
        if choice == "lock":
            return f"mg_lock({g})"
        if choice == "unlock":
            return f"mg_unlock({g})"
        if choice == "label":
            return "mg_modify_label({" + ", ".join(self._subset(self.guards)) + "})"
        if choice == "transfer" and others:
            items = [x + "+" for x in self._subset(self.guards, 1)]
            return "mg_transfer_caps({" + ", ".join(items) + "}, " + rng.choice(others) + ")"
        if choice == "declassify":
            return f"mg_declassify({{{g}}})"
        if choice in ("grant", "revoke") and others:
            call = "mg_grant" if choice == "grant" else "mg_revoke_grant"
            return f"{call}({{{g}}}, self, {rng.choice(others)})"
        if choice == "munmap":
            return f"mg_munmap({g})"
        if choice == "kill":
            return f"mg_kill({g})"
        if choice == "tag":
            return "mg_alloc_tag()"
        if choice == "get":
            return f"mg_get({g})"
        if choice == "posix":
            return f"mmap({rng.choice((4096, 8192))})"
        return None

    def _spawn(self) -> str | None:
        waiting = [t for t in self.threads if t != "main" and t not in self.spawned]
        if not waiting:
            return None
        t = waiting[0]
        self.spawned.add(t)
        if self.rng.random() < 0.2:
            return f"fork {t}"
        label = "{" + ", ".join(self._subset(self.guards)) + "}"
        return f"spawn {t} label {label} caps {self._caps(self.guards)}"

    def build(self) -> str:
        rng = self.rng
        # main sets up mapped guards with live blocks before anything else
        for _ in range(rng.randint(1, 3)):
            g = f"g{len(self.guards)}"
            self.guards.append(g)
            self._emit("main", f"{g} = mg_create({rng.choice(_GUARD_BACKINGS)})")
            b = f"b{self.count}"
            self._emit("main", f"{b} = mg_mmap({g}, {rng.choice((4096, 8192))}, RW)")
            self.ptrs.append(b)
            self.ptr_guard[b] = g
            for _ in range(rng.randint(1, 3)):
                p = f"p{self.count}"
                self._emit("main", f"{p} = mg_malloc({g}, {rng.choice((16, 32, 48, 64))})")
                self.ptrs.append(p)
                self.ptr_guard[p] = g
        while self.count < self.max_steps:
            thread = rng.choice([t for t in self.threads if t == "main" or t in self.spawned])
            r = rng.random()
            if thread == "main" and r < 0.08:
                stmt = self._spawn()
            elif r < 0.5:
                stmt = self._access()
            else:
                stmt = self._call(thread)
            if stmt is not None:
                self._emit(thread, stmt)
        lines = [f"config backend={rng.choice(_BACKINGS)} domains={rng.choice((3, 4, 5, 16))}"]
        for t in self.threads:
            lines.append(f"thread {t}:")
            lines += ["    " + s for s in self.blocks[t]]
        return "\n".join(lines) + "\n"

    def _emit(self, thread: str, stmt: str) -> None:
        self.blocks[thread].append(stmt)
        self.count += 1


def generate_scenario(
    seed: int,
    max_steps: int = MAX_STEPS,
    max_guards: int = MAX_GUARDS,
    max_principals: int = MAX_PRINCIPALS,
) -> str:
    """Scenario text drawn from ``seed``; the same seed always gives the same text."""
    return _Gen(random.Random(seed), max_steps, max_guards, max_principals).build()

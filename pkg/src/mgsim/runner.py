"""Deterministic scenario execution.

Threads are interleaved round-robin with a quantum of one statement plus a
seeded jitter of 0-2 extra statements.  Identical scenario, options and seed
always give a byte-identical report.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .api import Api
from .checksum import fnv1a_64
from .errors import ApiError, ParseError
from .kernel import Kernel
from .labels import Capability
from .memory import AccessKind, Backing, PagePerm
from .oracle import oracle_access
from .principals import MAIN_PRINCIPAL
from .scenario import CapsLit, LabelLit, Ref, Scenario, Stmt

MAX_STEPS = 1_000_000
DEFAULT_WRITE_BYTE = 0xAA
_RESULT_KINDS = {
    "mg_create": "guard",
    "mg_alloc_tag": "tag",
    "mg_malloc": "ptr",
    "mg_mmap": "ptr",
    "mmap": "ptr",
    "mg_clone": "principal",
    "mg_get": "int",
}


@dataclass
class ThreadState:
    name: str
    stmts: list[Stmt]
    pc: int = 0
    pid: int | None = None
    exit: str | None = None
    executed: int = 0

    @property
    def started(self) -> bool:
        return self.pid is not None

    @property
    def done(self) -> bool:
        return self.exit is not None


@dataclass
class RunReport:
    seed: int
    backend: str
    counters: dict[str, int]
    fault_log: list[str]
    exits: dict[str, str]
    executed: dict[str, int]
    skipped: dict[str, int]
    checksums: dict[int, int]
    failures: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    divergences: list[str] = field(default_factory=list)
    oracle_checks: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def serialize(self) -> str:
        out = [f"seed {self.seed}", f"backend {self.backend}"]
        out.append("counters " + " ".join(f"{k}={v}" for k, v in self.counters.items()))
        for name, status in self.exits.items():
            out.append(f"thread {name} exit={status} executed={self.executed[name]} skipped={self.skipped[name]}")
        out += [f"fault {line}" for line in self.fault_log]
        out += [f"checksum guard {gid} 0x{h:016x}" for gid, h in sorted(self.checksums.items())]
        out += [f"error {e}" for e in self.errors]
        out += [f"failure {f}" for f in self.failures]
        out.append(f"oracle checks={self.oracle_checks} divergences={len(self.divergences)}")
        out += [f"divergence {d}" for d in self.divergences]
        return "\n".join(out) + "\n"


class Runner:
    def __init__(
        self,
        scenario: Scenario,
        seed: int | None = None,
        backend: str | None = None,
        domains: int | None = None,
        strict: bool = True,
        oracle: bool = False,
        retag: str | None = None,
    ):
        cfg = scenario.config
        self.scenario = scenario
        self.seed = seed if seed is not None else cfg.get("seed", 0)
        self.backend = Backing(backend or cfg.get("backend", "md"))
        self.kernel = Kernel(
            backing=self.backend,
            domains=domains or cfg.get("domains", 16),
            reserved_domains=cfg.get("reserved", 2),
            max_guards=cfg.get("max_guards", 64),
            seed=self.seed,
            retag_policy=retag or cfg.get("retag", "different"),
        )
        self.api = Api(self.kernel)
        self.strict = strict
        self.oracle = oracle
        self.rng = random.Random(self.seed * 2 + 1)
        self.threads = {n: ThreadState(n, list(b)) for n, b in scenario.threads.items()}
        self.order: list[str] = []
        self.env: dict[str, int] = {}
        self.kinds: dict[str, str] = {}
        self.marks: dict[int, int] = {}
        self.failures: list[str] = []
        self.errors: list[str] = []
        self.divergences: list[str] = []
        self.oracle_checks = 0

    # -- value resolution -----------------------------------------------

    def _lookup(self, ref: Ref, ts: ThreadState) -> int:
        if ref.name == "self":
            return ts.pid
        if ref.name in self.env:
            return self.env[ref.name] + ref.offset
        t = self.threads.get(ref.name)
        if t is not None:
            if not t.started:
                raise ParseError(f"thread {ref.name!r} has not been started", ts.stmts[ts.pc - 1].line)
            return t.pid
        raise ParseError(f"name {ref.name!r} is not bound yet", ts.stmts[ts.pc - 1].line)

    def _tag_of(self, item, ts: ThreadState) -> int:
        if isinstance(item, int):
            return item
        value = self._lookup(item, ts)
        if self.kinds.get(item.name) == "guard":
            g = self.kernel.guards.get(value)
            if g is None:
                raise ParseError(f"guard {item.name!r} no longer exists", ts.stmts[ts.pc - 1].line)
            return g.secrecy_tag
        return value

    def _value(self, arg, ts: ThreadState):
        if isinstance(arg, int):
            return arg
        if isinstance(arg, str):
            if arg == "self":
                return ts.pid
            if arg in {b.value for b in Backing}:
                return arg
            return PagePerm[arg]
        if isinstance(arg, Ref):
            return self._lookup(arg, ts)
        if isinstance(arg, LabelLit):
            return frozenset(self._tag_of(i, ts) for i in arg.items)
        if isinstance(arg, CapsLit):
            return [Capability(self._tag_of(who, ts), plus=p, minus=m) for who, p, m in arg.items]
        raise TypeError(arg)

    # -- statements -------------------------------------------------------

    def _where(self, ts: ThreadState, stmt: Stmt) -> str:
        return f"{ts.name}:{stmt.line}"

    def _fail(self, ts: ThreadState, stmt: Stmt, msg: str, force: bool = False) -> None:
        if self.strict or force:
            self.failures.append(f"{self._where(ts, stmt)}: {msg}")

    def _peek(self, ts: ThreadState, *kinds: str) -> Stmt | None:
        if ts.pc < len(ts.stmts) and ts.stmts[ts.pc].kind in kinds:
            stmt = ts.stmts[ts.pc]
            ts.pc += 1
            return stmt
        return None

    def _start(self, name: str, pid: int) -> None:
        t = self.threads[name]
        if t.started:
            raise ParseError(f"thread {name!r} started twice")
        t.pid = pid
        self.order.append(name)

    def _after_success(self, ts: ThreadState, stmt: Stmt) -> None:
        exp = self._peek(ts, "expect_error", "expect_fault")
        if exp is not None:
            self._fail(ts, exp, f"expected {exp.kind[7:]} {exp.name}, but '{stmt.text}' succeeded", force=True)

    def _after_error(self, ts: ThreadState, stmt: Stmt, err: ApiError) -> None:
        exp = self._peek(ts, "expect_error", "expect_fault")
        self.errors.append(f"{self._where(ts, stmt)} {err.code}")
        if exp is None:
            self._fail(ts, stmt, f"unexpected {err}")
        elif exp.kind != "expect_error" or exp.name != err.code:
            self._fail(ts, exp, f"expected {exp.kind[7:]} {exp.name}, got {err.code}", force=True)

    def _call(self, ts: ThreadState, stmt: Stmt) -> None:
        try:
            args = [self._value(a, ts) for a in stmt.args]
            if stmt.name in ("mmap", "mprotect"):
                result = self.api.guard_posix_surface(ts.pid, stmt.name, *args)
            else:
                result = self.api.dispatch(ts.pid, stmt.name, *args)
        except ApiError as err:
            self._after_error(ts, stmt, err)
            return
        if stmt.target is not None:
            self.env[stmt.target] = int(result) if result is not None else 0
            self.kinds[stmt.target] = _RESULT_KINDS.get(stmt.name, "int")
        self._after_success(ts, stmt)

    def _access(self, ts: ThreadState, stmt: Stmt) -> None:
        try:
            pointer = self._value(stmt.args[0], ts)
        except ApiError as err:
            self._after_error(ts, stmt, err)
            return
        kind = AccessKind(stmt.name)
        size = stmt.args[1] if len(stmt.args) > 1 else 1
        if self.oracle:
            snap = self.kernel.snapshot(include_data=False)
            expected = oracle_access(snap, ts.pid, pointer, kind.value, size)
        k = self.kernel
        if kind == AccessKind.READ:
            res = k.read(ts.pid, pointer, size)
            fault = None if isinstance(res, bytes) else res
        elif kind == AccessKind.WRITE:
            byte = stmt.args[2] if len(stmt.args) > 2 else DEFAULT_WRITE_BYTE
            fault = k.write(ts.pid, pointer, bytes([byte & 0xFF]) * size)
        else:
            fault = k.access(ts.pid, pointer, kind, size)
        if self.oracle:
            self.oracle_checks += 1
            actual = ("allowed", None) if fault is None else ("denied", fault.cause.value)
            if actual != expected:
                self.divergences.append(f"{self._where(ts, stmt)} kernel={actual} oracle={expected}")
        if fault is None:
            self._after_success(ts, stmt)
            return
        ts.exit = f"fault({fault.seq})"
        exp = self._peek(ts, "expect_fault", "expect_error")
        if exp is None:
            self._fail(ts, stmt, f"unexpected fault {fault.cause.value}")
        elif exp.kind != "expect_fault" or exp.name not in ("any", fault.cause.value):
            self._fail(ts, exp, f"expected {exp.kind[7:]} {exp.name}, got fault {fault.cause.value}", force=True)

    def _guard_sum(self, ts: ThreadState, ref: Ref) -> tuple[int, int]:
        gid = self._lookup(ref, ts)
        g = self.kernel.guards.get(gid)
        if g is None:
            raise ParseError(f"guard {ref.name!r} does not exist")
        return gid, fnv1a_64(bytes(g.data))

    def _would_block(self, ts: ThreadState) -> bool:
        stmt = ts.stmts[ts.pc]
        if stmt.kind != "join":
            return False
        t = self.threads[stmt.target]
        return not t.done

    def _step(self, ts: ThreadState) -> None:
        stmt = ts.stmts[ts.pc]
        ts.pc += 1
        ts.executed += 1
        kind = stmt.kind
        if kind == "call":
            self._call(ts, stmt)
        elif kind == "access":
            self._access(ts, stmt)
        elif kind in ("spawn", "fork"):
            try:
                if self.threads[stmt.target].started:
                    raise ParseError(f"thread {stmt.target!r} started twice", stmt.line)
                if kind == "spawn":
                    label, caps = (self._value(a, ts) for a in stmt.args)
                    pid = self.api.dispatch(ts.pid, "mg_clone", label, caps)
                else:
                    pid = self.api.guard_posix_surface(ts.pid, "fork")
                self._start(stmt.target, pid)
            except ApiError as err:
                self._after_error(ts, stmt, err)
            else:
                self._after_success(ts, stmt)
        elif kind == "join":
            t = self.threads[stmt.target]
            status = self.kernel.join(ts.pid, t.pid, block=False)
            if stmt.name is not None and status.kind != stmt.name:
                self._fail(ts, stmt, f"thread {t.name} exited {status}, expected {stmt.name}", force=True)
        elif kind == "mark":
            try:
                gid, h = self._guard_sum(ts, stmt.args[0])
                self.marks[gid] = h
            except ApiError as err:
                self._after_error(ts, stmt, err)
        elif kind == "expect_unchanged":
            try:
                gid, h = self._guard_sum(ts, stmt.args[0])
            except ApiError as err:
                self._after_error(ts, stmt, err)
                return
            if self.marks.get(gid) != h:
                self._fail(ts, stmt, f"guard {stmt.args[0].name} contents changed", force=True)
        else:
            self._fail(ts, stmt, "expectation without a preceding statement", force=True)
        if not ts.done and ts.pc >= len(ts.stmts):
            self.kernel.exit(ts.pid)
            ts.exit = "normal"

    # -- scheduling ---------------------------------------------------------

    def run(self) -> RunReport:
        if "main" in self.threads:
            self._start("main", MAIN_PRINCIPAL)
            if not self.threads["main"].stmts:
                self.kernel.exit(MAIN_PRINCIPAL)
                self.threads["main"].exit = "normal"
        cursor = 0
        last_pid = None
        idle = 0
        steps = 0
        while True:
            live = [n for n in self.order if not self.threads[n].done]
            if not live:
                break
            if idle >= len(live):
                for n in live:
                    t = self.threads[n]
                    t.exit = "deadlock"
                    self.failures.append(f"{n}: deadlocked at line {t.stmts[t.pc].line}")
                break
            name = live[cursor % len(live)]
            cursor = (cursor % len(live)) + 1
            ts = self.threads[name]
            quantum = 1 + self.rng.randint(0, 2)
            ran = 0
            while ran < quantum and not ts.done and not self._would_block(ts):
                if ts.pid != last_pid:
                    if last_pid is not None:
                        self.kernel.context_switch(last_pid, ts.pid)
                    last_pid = ts.pid
                self._step(ts)
                ran += 1
                steps += 1
            idle = 0 if ran else idle + 1
            if steps > MAX_STEPS:
                self.failures.append(f"step limit {MAX_STEPS} exceeded")
                break
        return self._report()

    def _report(self) -> RunReport:
        k = self.kernel
        exits, executed, skipped = {}, {}, {}
        for name, t in self.threads.items():
            exits[name] = t.exit or "not-started"
            executed[name] = t.executed
            skipped[name] = len(t.stmts) - t.pc
        return RunReport(
            seed=self.seed,
            backend=self.backend.value,
            counters=k.counters.as_dict(),
            fault_log=[f.to_line() for f in k.faults],
            exits=exits,
            executed=executed,
            skipped=skipped,
            checksums={gid: fnv1a_64(bytes(g.data)) for gid, g in k.guards.items() if g.mapped},
            failures=self.failures,
            errors=self.errors,
            divergences=self.divergences,
            oracle_checks=self.oracle_checks,
        )


def run_scenario(scenario: Scenario, seed: int | None = None, **options) -> RunReport:
    return Runner(scenario, seed=seed, **options).run()

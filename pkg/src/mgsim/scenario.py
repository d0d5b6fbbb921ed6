"""Scenario DSL.

A scenario is a set of named threads, each a block of statements::

    config backend=md seed=7
    thread main:
        g = mg_create()
        buf = mg_mmap(g, 65536, RW)
        key = mg_malloc(g, 32)
        write key 32 0x41
        mg_lock(g)
        read key
        expect fault locked

Statements, one per line (``#`` starts a comment):

* ``[name =] <call>(<args>)`` for any guard call or ``mmap``/``mprotect``
* ``read|write|exec <addr|name[+off]> [len] [byte]``
* ``expect fault <cause|any>`` / ``expect error <Code>`` (checks the previous statement)
* ``expect unchanged <guard>`` (compares against the last ``mark <guard>``)
* ``spawn <thread> label <L> caps <C>`` / ``fork <thread>`` / ``join <thread> [normal|fault]``

Only ``main`` runs at start; other threads run once spawned or forked.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .api import ACCESS_CONTROL_CALLS, MEMORY_CALLS, POSIX_CALLS
from .errors import ERROR_CODES, ParseError
from .memory import Backing, FaultCause, PagePerm

CALL_NAMES = frozenset(ACCESS_CONTROL_CALLS + MEMORY_CALLS + POSIX_CALLS) - {"fork"}
ACCESS_OPS = {"read": "read", "write": "write", "exec": "execute"}
FAULT_CAUSES = {c.value for c in FaultCause} | {"any"}
KEYWORDS = {p.name for p in PagePerm} | {b.value for b in Backing} | {"self"}
CONFIG_KEYS = {"backend", "domains", "reserved", "seed", "retag", "max_guards"}

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_CALL_RE = re.compile(rf"^(?:({_NAME})\s*=\s*)?({_NAME})\s*\((.*)\)$")
_THREAD_RE = re.compile(rf"^thread\s+({_NAME})\s*:$")
_SPAWN_RE = re.compile(rf"^spawn\s+({_NAME})\s+label\s+(\{{.*?\}})\s+caps\s+(\{{.*?\}})$")
_ADDR_RE = re.compile(rf"^(?:({_NAME})|(0[xX][0-9a-fA-F]+|\d+))(?:\s*\+\s*(0[xX][0-9a-fA-F]+|\d+))?$")
_CAP_ITEM_RE = re.compile(rf"^({_NAME}|\d+)([+-]{{1,2}})$")


@dataclass(frozen=True)
class Ref:
    """A name, optionally offset: resolved at run time."""

    name: str
    offset: int = 0


@dataclass(frozen=True)
class LabelLit:
    items: tuple  # ints or Refs


@dataclass(frozen=True)
class CapsLit:
    items: tuple  # (int | Ref, plus, minus)


@dataclass(frozen=True)
class Stmt:
    kind: str  # call, access, expect_fault, expect_error, expect_unchanged, mark, spawn, fork, join
    line: int
    text: str
    target: str | None = None
    name: str | None = None
    args: tuple = ()


@dataclass
class Scenario:
    threads: dict[str, list[Stmt]] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    def statement_count(self) -> int:
        return sum(len(b) for b in self.threads.values())


def _int(text: str) -> int:
    return int(text, 0)


def _split_args(text: str, line: int) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced braces", line)
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ParseError("unbalanced braces", line)
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    if any(not p for p in parts):
        raise ParseError("empty argument", line)
    return parts


def _parse_atom(text: str, line: int):
    if re.fullmatch(r"-?(0[xX][0-9a-fA-F]+|\d+)", text):
        return _int(text)
    if text in KEYWORDS:
        return text
    m = _ADDR_RE.match(text)
    if m and m.group(1):
        return Ref(m.group(1), _int(m.group(3)) if m.group(3) else 0)
    raise ParseError(f"cannot parse argument {text!r}", line)


def _parse_label(text: str, line: int) -> LabelLit:
    body = text.strip()[1:-1].strip()
    items = []
    for item in filter(None, (s.strip() for s in body.split(","))):
        atom = _parse_atom(item, line)
        if isinstance(atom, str):
            raise ParseError(f"bad label element {item!r}", line)
        items.append(atom)
    return LabelLit(tuple(items))


def _parse_caps(text: str, line: int) -> CapsLit:
    body = text.strip()[1:-1].strip()
    items = []
    for item in filter(None, (s.strip() for s in body.split(","))):
        m = _CAP_ITEM_RE.match(item)
        if m is None or len(set(m.group(2))) != len(m.group(2)):
            raise ParseError(f"bad capability {item!r}", line)
        who = int(m.group(1)) if m.group(1).isdigit() else Ref(m.group(1))
        items.append((who, "+" in m.group(2), "-" in m.group(2)))
    return CapsLit(tuple(items))


def _parse_arg(text: str, line: int):
    if text.startswith("{"):
        if not text.endswith("}"):
            raise ParseError(f"bad literal {text!r}", line)
        if re.search(r"[+-]\s*(,|\}$)", text):
            return _parse_caps(text, line)
        return _parse_label(text, line)
    return _parse_atom(text, line)


def _parse_statement(text: str, line: int) -> Stmt:
    words = text.split()
    head = words[0]
    if head in ACCESS_OPS:
        if not 2 <= len(words) <= 4:
            raise ParseError(f"usage: {head} <addr> [len] [byte]", line)
        addr = _parse_atom(words[1], line)
        if isinstance(addr, str):
            raise ParseError(f"bad address {words[1]!r}", line)
        try:
            extra = tuple(_int(w) for w in words[2:])
        except ValueError:
            raise ParseError("length and byte must be integers", line) from None
        return Stmt("access", line, text, name=ACCESS_OPS[head], args=(addr,) + extra)
    if head == "expect":
        if len(words) != 3:
            raise ParseError("usage: expect fault|error|unchanged <arg>", line)
        what, arg = words[1], words[2]
        if what == "fault":
            if arg not in FAULT_CAUSES:
                raise ParseError(f"unknown fault cause {arg!r}", line)
            return Stmt("expect_fault", line, text, name=arg)
        if what == "error":
            if arg not in ERROR_CODES:
                raise ParseError(f"unknown error code {arg!r}", line)
            return Stmt("expect_error", line, text, name=arg)
        if what == "unchanged":
            return Stmt("expect_unchanged", line, text, args=(Ref(arg),))
        raise ParseError(f"unknown expectation {what!r}", line)
    if head == "mark":
        if len(words) != 2:
            raise ParseError("usage: mark <guard>", line)
        return Stmt("mark", line, text, args=(Ref(words[1]),))
    if head == "spawn":
        m = _SPAWN_RE.match(text)
        if m is None:
            raise ParseError("usage: spawn <thread> label {..} caps {..}", line)
        return Stmt("spawn", line, text, target=m.group(1),
                    args=(_parse_label(m.group(2), line), _parse_caps(m.group(3), line)))
    if head in ("fork", "join") and not text.startswith(head + "("):
        if head == "fork" and len(words) != 2 or head == "join" and len(words) not in (2, 3):
            raise ParseError(f"usage: {head} <thread>", line)
        status = words[2] if len(words) == 3 else None
        if status not in (None, "normal", "fault"):
            raise ParseError(f"unknown exit status {status!r}", line)
        return Stmt(head, line, text, target=words[1], name=status)
    m = _CALL_RE.match(text)
    if m is None:
        raise ParseError(f"cannot parse statement {text!r}", line)
    result, call, argtext = m.groups()
    if call not in CALL_NAMES:
        raise ParseError(f"unknown call {call!r}", line)
    args = tuple(_parse_arg(a, line) for a in _split_args(argtext, line))
    return Stmt("call", line, text, target=result, name=call, args=args)


def _refs(stmt: Stmt):
    def walk(x):
        if isinstance(x, Ref):
            yield x.name
        elif isinstance(x, LabelLit):
            for i in x.items:
                yield from walk(i)
        elif isinstance(x, CapsLit):
            for who, _, _ in x.items:
                yield from walk(who)

    for a in stmt.args:
        yield from walk(a)


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    current: list[Stmt] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("config"):
            for item in line.split()[1:]:
                key, _, value = item.partition("=")
                if key not in CONFIG_KEYS or not value:
                    raise ParseError(f"bad config item {item!r}", lineno)
                sc.config[key] = value if key in ("backend", "retag") else _int(value)
            continue
        m = _THREAD_RE.match(line)
        if m:
            if m.group(1) in sc.threads:
                raise ParseError(f"thread {m.group(1)!r} declared twice", lineno)
            current = sc.threads[m.group(1)] = []
            continue
        if current is None:
            current = sc.threads.setdefault("main", [])
        current.append(_parse_statement(line, lineno))

    if sc.config.get("backend", "md") not in {b.value for b in Backing}:
        raise ParseError(f"unknown backend {sc.config['backend']!r}")
    if sc.threads and "main" not in sc.threads:
        raise ParseError("scenario has threads but no 'main'")
    bound = {s.target for b in sc.threads.values() for s in b if s.kind == "call" and s.target}
    known = bound | set(sc.threads) | KEYWORDS
    for block in sc.threads.values():
        for s in block:
            if s.kind in ("spawn", "fork", "join") and s.target not in sc.threads:
                raise ParseError(f"undeclared thread {s.target!r}", s.line)
            for name in _refs(s):
                if name not in known:
                    raise ParseError(f"undeclared name {name!r}", s.line)
    return sc

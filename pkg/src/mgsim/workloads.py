"""Synthetic workload scenarios shaped like the two evaluation programs.

* TLS server: one guard per session key (many guards, exercises domain
  virtualization) or all session keys in one guard.
* Key-value store: each worker thread keeps its memtable in a private guard.

Both return scenario text so they run through the normal harness.
"""
from __future__ import annotations


def tls_sessions(sessions: int = 20, per_session: bool = True, requests: int = 3) -> str:
    lines = ["# TLS-style server: session keys held in guards", "config backend=md", "thread main:"]
    if not per_session:
        lines += ["    g = mg_create()", f"    heap = mg_mmap(g, {4096 * max(1, sessions // 64 + 1)}, RW)"]
    for s in range(sessions):
        g = f"g{s}" if per_session else "g"
        if per_session:
            lines += [f"    {g} = mg_create()", f"    heap{s} = mg_mmap({g}, 4096, RW)"]
        lines += [f"    key{s} = mg_malloc({g}, 32)", f"    write key{s} 32 {0x10 + s % 0xE0}"]
    for r in range(requests):
        for s in range(sessions):
            # handshake reads the key, then records are encrypted with it
            lines.append(f"    read key{s} 32")
    return "\n".join(lines) + "\n"


def kv_store(workers: int = 3, ops: int = 12) -> str:
    lines = ["# key-value store: one private memtable guard per worker thread", "config backend=md"]
    lines.append("thread main:")
    for w in range(workers):
        lines.append(f"    spawn w{w} label {{}} caps {{}}")
    for w in range(workers):
        lines.append(f"    join w{w} normal")
    for w in range(workers):
        lines += [
            f"thread w{w}:",
            f"    m{w} = mg_create()",
            f"    mem{w} = mg_mmap(m{w}, 8192, RW)",
        ]
        for i in range(ops):
            lines += [f"    e{w}_{i} = mg_malloc(m{w}, {16 * (1 + i % 4)})", f"    write e{w}_{i} 16 {w * 16 + i}"]
        for i in range(0, ops, 2):
            lines += [f"    read e{w}_{i} 16", f"    mg_free(m{w}, e{w}_{i})"]
    return "\n".join(lines) + "\n"


WORKLOADS = {
    "tls_sessions": lambda: tls_sessions(20, True),
    "tls_single": lambda: tls_sessions(20, False),
    "kv_store": kv_store,
}

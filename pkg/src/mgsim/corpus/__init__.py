"""Attack scenarios, each showing one class of memory-safety violation blocked.

``CORPUS`` maps a scenario file to the vulnerability class it demonstrates.
"""
from __future__ import annotations

from importlib import resources

CORPUS = {
    "shared_library.mg": "shared-library access",
    "binding_overflow.mg": "unsafe-binding overflow (MTE)",
    "cross_thread.mg": "cross-thread escalation",
    "missing_bounds.mg": "missing bounds check (MTE)",
    "key_protection.mg": "third-party library key theft (lock/unlock)",
    "heartbleed.mg": "heartbeat over-read (MTE)",
    "shared_mapping.mg": "shared-mapping aliasing",
    "ctypes_uaf.mg": "foreign-function use-after-free (MTE)",
}

# synthetic workloads, regenerated by mgsim.workloads
WORKLOAD_FILES = {
    "tls_sessions.mg": "TLS server, one guard per session",
    "tls_single.mg": "TLS server, all sessions in one guard",
    "kv_store.mg": "key-value store, private guard per worker",
}

ALL = {**CORPUS, **WORKLOAD_FILES}


def path(name: str):
    return resources.files(__name__) / name


def load(name: str) -> str:
    if name not in ALL:
        raise KeyError(f"no corpus scenario {name!r}")
    return path(name).read_text()

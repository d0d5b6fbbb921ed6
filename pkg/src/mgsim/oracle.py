"""Brute-force access verdicts recomputed from a raw state snapshot.

Deliberately shares no code with the kernel's enforcement path.  It walks
the plain-data snapshot itself and keeps its own permission and DACR tables.
"""
from __future__ import annotations

_READ, _WRITE, _EXEC = "read", "write", "execute"

# page permission value -> kinds it admits
_PERM_ADMITS = {
    0: frozenset(),
    1: frozenset({_READ}),
    2: frozenset({_WRITE}),
    3: frozenset({_READ, _WRITE}),
    4: frozenset({_EXEC}),
    5: frozenset({_READ, _EXEC}),
    7: frozenset({_READ, _WRITE, _EXEC}),
}

# two-bit DACR field -> behaviour
_DACR_TABLE = {
    0b00: "fault",    # no access
    0b01: "pages",    # client: check page tables
    0b10: "fault",    # reserved: fail closed
    0b11: "full",     # manager: no permission check
}


def _locate(state: dict, pos: int):
    for gid, g in state["guards"].items():
        base = g["base"]
        if base is not None and base <= pos < base + g["length"]:
            return gid, g
    return None, None


def _verdict_at(state: dict, principal: dict, pos: int, ptag: int, kind: str):
    gid, g = _locate(state, pos)
    if g is None:
        return "page-perm"
    pte = g["pages"].get(pos >> 12)
    if pte is None or not pte[0]:
        return "page-perm"
    if g["saved_tag"] is not None:
        return "locked"
    tag = g["tag"]
    if tag not in principal["label"] or tag not in principal["plus"]:
        return "label"
    if kind not in _PERM_ADMITS[g["perm"]]:
        return "page-perm"
    if g["backing"] == "md":
        domain = pte[2]
        if domain is None:
            mode = state["domains"]["spill"][gid]
        else:
            mode = (state["domains"]["dacr"] >> (2 * domain)) & 0b11
        rule = _DACR_TABLE[mode]
        if rule == "fault":
            return "domain-fault"
        if rule == "pages" and kind not in _PERM_ADMITS[pte[1]]:
            return "page-perm"
    elif g["backing"] == "mte":
        if state["granules"].get(pos >> 4, 0) != ptag:
            return "tag-mismatch"
    return None


def oracle_access(state: dict, principal: int, pointer: int, kind: str, size: int = 1) -> tuple[str, str | None]:
    """Returns ("allowed", None) or ("denied", cause)."""
    p = state["principals"][principal]
    p = {"label": set(p["label"]), "plus": set(p["plus"])}
    address = pointer & ((1 << 56) - 1)
    ptag = (pointer >> 56) & 0xF
    end = address + max(size, 1)
    pos = address
    while pos < end:
        cause = _verdict_at(state, p, pos, ptag, kind)
        if cause is not None:
            return "denied", cause
        pos = (pos | 0xF) + 1
    return "allowed", None

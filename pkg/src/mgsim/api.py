"""Syscall-style facade over the kernel state.

``dispatch`` is the single entry point.  Each call runs as one transaction
that either returns its result or raises one :class:`ApiError`.
Hardware domain indices never appear in a result.
"""
from __future__ import annotations

import re
from typing import Any, Callable, Iterable

from .errors import ApiError, NoSuchEdge, ParseError, PermissionDenied
from .kernel import Kernel
from .labels import Capability, check_flow
from .memory import PagePerm

# access-control calls, then memory-management calls
ACCESS_CONTROL_CALLS = (
    "mg_alloc_tag",
    "mg_modify_label",
    "mg_transfer_caps",
    "mg_declassify",
    "mg_grant",
    "mg_revoke_grant",
    "mg_lock",
    "mg_unlock",
    "mg_clone",
)
MEMORY_CALLS = (
    "mg_create",
    "mg_kill",
    "mg_malloc",
    "mg_free",
    "mg_mprotect",
    "mg_mmap",
    "mg_munmap",
    "mg_get",
)
POSIX_CALLS = ("fork", "mmap", "mprotect")

_LABEL_RE = re.compile(r"^\s*\{\s*(.*?)\s*\}\s*$", re.S)
_CAP_RE = re.compile(r"^(\d+)([+-]{1,2})$")


def _tags(value: int | Iterable[int]) -> list[int]:
    if isinstance(value, int):
        return [value]
    return sorted(set(value))


def _perm(value: PagePerm | str | int) -> PagePerm:
    if isinstance(value, str):
        return PagePerm.parse(value)
    return PagePerm(value)


def hook_parse_label(text: str) -> frozenset[int]:
    """Parse a label literal such as ``{3, 7}``."""
    m = _LABEL_RE.match(text)
    if m is None:
        raise ParseError(f"malformed label {text!r}")
    body = m.group(1)
    if not body:
        return frozenset()
    tags = set()
    for item in body.split(","):
        item = item.strip()
        if not item.isdigit():
            raise ParseError(f"malformed tag {item!r} in label {text!r}")
        tags.add(int(item))
    return frozenset(tags)


def hook_parse_caps(text: str) -> list[Capability]:
    """Parse a capability literal such as ``{3+, 7-, 9+-}``."""
    m = _LABEL_RE.match(text)
    if m is None:
        raise ParseError(f"malformed capability list {text!r}")
    caps = []
    for item in filter(None, (s.strip() for s in m.group(1).split(","))):
        cm = _CAP_RE.match(item)
        if cm is None or len(set(cm.group(2))) != len(cm.group(2)):
            raise ParseError(f"malformed capability {item!r}")
        flags = cm.group(2)
        caps.append(Capability(int(cm.group(1)), plus="+" in flags, minus="-" in flags))
    return caps


def hook_check_allowed(src: Iterable[int], dst: Iterable[int]) -> bool:
    return check_flow(frozenset(src), frozenset(dst))


class Api:
    def __init__(self, kernel: Kernel | None = None):
        self.kernel = kernel if kernel is not None else Kernel()
        self._calls: dict[str, Callable[..., Any]] = {
            "mg_alloc_tag": self._alloc_tag,
            "mg_modify_label": self._modify_label,
            "mg_transfer_caps": self._transfer_caps,
            "mg_declassify": self._declassify,
            "mg_grant": self._grant,
            "mg_revoke_grant": self._revoke_grant,
            "mg_lock": self._lock,
            "mg_unlock": self._unlock,
            "mg_clone": self._clone,
            "mg_create": self._create,
            "mg_kill": self._kill,
            "mg_malloc": self._malloc,
            "mg_free": self._free,
            "mg_mprotect": self._mprotect,
            "mg_mmap": self._mmap,
            "mg_munmap": self._munmap,
            "mg_get": self._get,
        }
        self._in_dispatch = False

    @property
    def call_names(self) -> tuple[str, ...]:
        return tuple(self._calls)

    def dispatch(self, caller: int, name: str, *args: Any) -> Any:
        fn = self._calls.get(name)
        if fn is None:
            raise ParseError(f"unknown call {name!r}")
        k = self.kernel
        with k._lock:
            k._running(caller)
            self._in_dispatch = True
            try:
                return fn(caller, *args)
            except ApiError:
                raise
            except (TypeError, ValueError, KeyError, AttributeError) as exc:
                raise ParseError(f"bad arguments to {name}: {exc}") from None
            finally:
                self._in_dispatch = False

    # -- hooks ------------------------------------------------------------

    def hook_is_labeled(self, pid: int) -> bool:
        p = self.kernel.principal(pid)
        return bool(p.label) or len(p.caps) > 0

    def hook_set_label(self, pid: int, label: Iterable[int]) -> None:
        if not self._in_dispatch:
            raise PermissionDenied("labels are set only from inside a dispatched call")
        self.kernel.principal(pid).label = frozenset(label)

    hook_check_allowed = staticmethod(hook_check_allowed)
    hook_parse_label = staticmethod(hook_parse_label)

    def guard_posix_surface(self, caller: int, call: str, *args: Any) -> Any:
        """Plain fork/mmap/mprotect, kept from touching guard state."""
        k = self.kernel
        if call == "fork":
            return k.fork(caller)
        if call == "mmap":
            length, at = (list(args) + [None])[:2]
            return k.posix_mmap(caller, length, at)
        if call == "mprotect":
            address, length, perm = args
            return k.posix_mprotect(caller, address, length, _perm(perm))
        raise ParseError(f"unknown POSIX call {call!r}")

    # -- access control ---------------------------------------------------

    def _alloc_tag(self, caller):
        return self.kernel.alloc_tag(caller)

    def _modify_label(self, caller, label):
        return self.kernel.modify_label(caller, _tags(label))

    def _transfer_caps(self, caller, caps, dst):
        return self.kernel.transfer_caps(caller, dst, caps)

    def _declassify(self, caller, tags):
        k = self.kernel
        tags = _tags(tags)
        for t in tags:
            if not k.can_declassify(caller, t):
                raise PermissionDenied(f"principal {caller} is not an authority for tag {t}")
        for t in tags:
            k.declassify(caller, t)

    def _check_authority(self, caller, tags):
        p = self.kernel.principal(caller)
        for t in tags:
            if t not in p.caps.minus and self.kernel.tags.owner(t) != caller:
                raise PermissionDenied(f"principal {caller} does not hold {t}-")

    def _grant(self, caller, tags, p1, p2):
        tags = _tags(tags)
        self._check_authority(caller, tags)
        self.kernel.principal(p1)
        self.kernel.principal(p2)
        for t in tags:
            self.kernel.grant(caller, p1, p2, t)

    def _revoke_grant(self, caller, tags, p1, p2):
        tags = _tags(tags)
        self._check_authority(caller, tags)
        for t in tags:
            if (p1, p2, t) not in self.kernel.delegations:
                raise NoSuchEdge(f"no delegation {p1} -> {p2} for tag {t}")
        for t in tags:
            self.kernel.revoke_grant(caller, p1, p2, t)

    def _lock(self, caller, gid):
        return self.kernel.lock(caller, gid)

    def _unlock(self, caller, gid):
        return self.kernel.unlock(caller, gid)

    def _clone(self, caller, label=(), caps=()):
        pid = self.kernel.clone(caller, _tags(label), caps)
        self.hook_set_label(pid, _tags(label))
        return pid

    # -- memory management ------------------------------------------------

    def _create(self, caller, backing=None):
        return self.kernel.create_guard(caller, backing)

    def _kill(self, caller, gid):
        return self.kernel.destroy_guard(caller, gid)

    def _malloc(self, caller, gid, size):
        return self.kernel.guard_alloc(caller, gid, size)

    def _free(self, caller, gid, pointer):
        return self.kernel.guard_free(caller, gid, pointer)

    def _mprotect(self, caller, gid, perm):
        return self.kernel.set_protection(caller, gid, _perm(perm))

    def _mmap(self, caller, gid, length, perm=PagePerm.RW):
        return self.kernel.map_pages(caller, gid, length, _perm(perm))

    def _munmap(self, caller, gid):
        return self.kernel.unmap_guard(caller, gid)

    def _get(self, caller, gid):
        return self.kernel.get_protection(gid)

"""Thread principals and their lifecycle state."""
from __future__ import annotations

from dataclasses import dataclass, field

from .labels import CapSet

MAIN_PRINCIPAL = 0


@dataclass(frozen=True)
class ExitStatus:
    kind: str  # "normal" or "fault"
    fault_seq: int | None = None

    def __str__(self) -> str:
        return "normal" if self.kind == "normal" else f"fault({self.fault_seq})"


NORMAL_EXIT = ExitStatus("normal")


@dataclass
class Principal:
    id: int
    label: frozenset[int] = frozenset()
    caps: CapSet = field(default_factory=CapSet)
    parent: int | None = None
    exit: ExitStatus | None = None

    @property
    def running(self) -> bool:
        return self.exit is None

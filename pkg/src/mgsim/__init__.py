"""Executable model of guard-based intra-process privilege separation."""
from .api import Api
from .errors import ApiError
from .kernel import Kernel
from .labels import Capability, CapSet, check_flow, validate_label_change
from .memory import AccessKind, Backing, FaultCause, FaultRecord, PagePerm
from .runner import RunReport, run_scenario
from .scenario import Scenario, parse_scenario

__all__ = [
    "Api",
    "ApiError",
    "AccessKind",
    "Backing",
    "CapSet",
    "Capability",
    "FaultCause",
    "FaultRecord",
    "Kernel",
    "PagePerm",
    "RunReport",
    "Scenario",
    "check_flow",
    "parse_scenario",
    "run_scenario",
    "validate_label_change",
]

"""Error taxonomy for the guard API.

Every API call either succeeds or raises exactly one :class:`ApiError`.
Access violations are not errors: they produce fault records and kill the
offending principal.
"""
from __future__ import annotations


class ApiError(Exception):
    code = "ApiError"

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}" if self.detail else self.code


class PermissionDenied(ApiError):
    code = "PermissionDenied"


class NoSuchGuard(ApiError):
    code = "NoSuchGuard"


class NoSuchPrincipal(ApiError):
    code = "NoSuchPrincipal"


class GuardLocked(ApiError):
    code = "GuardLocked"


class AlreadyLocked(ApiError):
    code = "AlreadyLocked"


class NotLocked(ApiError):
    code = "NotLocked"


class InvalidCapability(ApiError):
    code = "InvalidCapability"


class InvalidFree(ApiError):
    code = "InvalidFree"


class OutOfGuardMemory(ApiError):
    code = "OutOfGuardMemory"


class OutOfAddressSpace(ApiError):
    code = "OutOfAddressSpace"


class GuardLimitExceeded(ApiError):
    code = "GuardLimitExceeded"


class TagSpaceExhausted(ApiError):
    code = "TagSpaceExhausted"


class ReservedMode(ApiError):
    code = "ReservedMode"


class ReservedIndex(ApiError):
    code = "ReservedIndex"


class MisalignedRange(ApiError):
    code = "MisalignedRange"


class NoSuchEdge(ApiError):
    code = "NoSuchEdge"


class ParseError(ApiError):
    code = "ParseError"

    def __init__(self, detail: str = "", line: int | None = None):
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.line = line


ERROR_CODES: dict[str, type[ApiError]] = {
    cls.code: cls
    for cls in (
        PermissionDenied,
        NoSuchGuard,
        NoSuchPrincipal,
        GuardLocked,
        AlreadyLocked,
        NotLocked,
        InvalidCapability,
        InvalidFree,
        OutOfGuardMemory,
        OutOfAddressSpace,
        GuardLimitExceeded,
        TagSpaceExhausted,
        ReservedMode,
        ReservedIndex,
        MisalignedRange,
        NoSuchEdge,
        ParseError,
    )
}

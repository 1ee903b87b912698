from typing import Dict


class SubmaxError(Exception):
    """
    Base error carrying a structured detail, the same shape the HTTP routes
    return: {"message": ..., "code": ...}.
    """

    exit_code = 1
    default_code = "SUBMAX_ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        self.message = message
        self.code = code or self.default_code

    @property
    def detail(self) -> Dict[str, str]:
        return {"message": self.message, "code": self.code}


class CapabilityError(SubmaxError):
    """The request is well-formed but too large to enumerate or evaluate."""

    exit_code = 2
    default_code = "CAPABILITY_ERROR"


class InputError(SubmaxError):
    """Invalid arguments, files or preconditions."""

    exit_code = 3
    default_code = "INPUT_ERROR"


class InvariantViolation(SubmaxError):
    """An internal invariant broke (e.g. matroid axioms did not hold)."""

    exit_code = 4
    default_code = "INVARIANT_VIOLATION"

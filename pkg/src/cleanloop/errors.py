"""Engine errors. Every error carries a stable machine-readable code for the CLI and wire API."""

from __future__ import annotations


class CleanloopError(Exception):
    """Base error; `code` is stable across releases, `message` is for humans."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class SchemaError(CleanloopError):
    code = "schema"


class IngestError(CleanloopError):
    code = "ingest"


class SelectorError(CleanloopError):
    code = "selector"


class JobValidationError(CleanloopError):
    code = "invalid-job"


class RuleParseError(CleanloopError):
    code = "rule-parse"


class ConfigError(CleanloopError):
    code = "config"


class UndefinedExpertiseError(CleanloopError):
    code = "undefined-expertise"


class InfeasibleAssignmentError(CleanloopError):
    code = "infeasible-assignment"

    def __init__(self, message: str, uncoverable=None):
        super().__init__(message)
        self.uncoverable = set(uncoverable or ())


class OracleSizeError(CleanloopError):
    code = "oracle-size"


class RoutingError(CleanloopError):
    code = "routing"


class PlanningError(CleanloopError):
    code = "planning"


class LedgerConflictError(CleanloopError):
    code = "ledger-conflict"


class MissingEntryError(CleanloopError):
    code = "missing-entry"


class TaskNotFoundError(CleanloopError):
    code = "task-not-found"


class TaskClosedError(CleanloopError):
    code = "task-closed"


class ResponseMismatchError(CleanloopError):
    code = "response-mismatch"


class NotFoundError(CleanloopError):
    code = "not-found"


class AuditError(CleanloopError):
    code = "audit"


class RestoreError(CleanloopError):
    code = "restore"

"""Human-in-the-loop data cleaning: jobs, expertise-aware task allocation,
overlap-aware cost strategies, and factor-quality provenance, all event-sourced."""

from .model import (
    Budget,
    CellRef,
    CellSelector,
    CleaningJob,
    PendingTask,
    RelationInstance,
    Role,
    TaskKind,
    resolve_selector,
    validate_job,
)
from .expertise import HumanProfile, TaskHistory, expertise_score, smoothed_expertise
from .agents import FDRule, detect_fd_violations, parse_rules, repair_fd_violations
from .allocation import (
    Assignment,
    AssignmentProblem,
    PoolMember,
    assign_tasks,
    brute_force_assignment,
    route_interaction,
)
from .provenance import FactorLedger, ValidationStrategy, factor_quality
from .orchestrator import (
    QUALITATIVE_FIRST,
    QUANTITATIVE_FIRST,
    ExecutionPlan,
    handle_response,
    overlap_cells,
    plan_job,
    run_job,
)
from .store import Session, ingest_csv
from .simulate import ErrorInjectionSpec, compare_strategies, inject_errors, run_simulation

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "AssignmentProblem",
    "Budget",
    "CellRef",
    "CellSelector",
    "CleaningJob",
    "ErrorInjectionSpec",
    "ExecutionPlan",
    "FDRule",
    "FactorLedger",
    "HumanProfile",
    "PendingTask",
    "PoolMember",
    "QUALITATIVE_FIRST",
    "QUANTITATIVE_FIRST",
    "RelationInstance",
    "Role",
    "Session",
    "TaskHistory",
    "TaskKind",
    "ValidationStrategy",
    "assign_tasks",
    "brute_force_assignment",
    "compare_strategies",
    "detect_fd_violations",
    "expertise_score",
    "factor_quality",
    "handle_response",
    "ingest_csv",
    "inject_errors",
    "overlap_cells",
    "parse_rules",
    "plan_job",
    "repair_fd_violations",
    "resolve_selector",
    "route_interaction",
    "run_job",
    "run_simulation",
    "smoothed_expertise",
    "validate_job",
]

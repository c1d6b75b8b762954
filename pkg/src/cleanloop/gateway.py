"""Operator surface: engine entry points and the HTTP wire API.

Every wire mutation maps to exactly one engine command; HTTP handlers and
loopback callers (CLI, simulations, tests) share these functions, so the
served behavior and the tested behavior are the same code path.  All payloads
are versioned JSON documents.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import CleanloopError, JobValidationError, NotFoundError
from .expertise import DEFAULT_PRIOR, expertise_score, smoothed_expertise
from .model import Budget, CleaningJob, PendingTask, TaskKind, validate_job
from .orchestrator import (
    classify_strategy,
    handle_response,
    parse_cost_strategy,
    parse_validation_variant,
)
from .orchestrator import run_job as _run_job
from .provenance import ValidationStrategy
from .store import EV_JOB_ADD, Session
from .errors import UndefinedExpertiseError

_TASK_KINDS = (TaskKind.DETECT, TaskKind.REPAIR, TaskKind.VALIDATE, TaskKind.SPECIFY)

_HTTP_STATUS = {
    "not-found": 404,
    "task-not-found": 404,
    "task-closed": 409,
    "infeasible-assignment": 409,
    "planning": 409,
    "ledger-conflict": 409,
}


def list_pending_tasks(session: Session, human_id: str) -> list[PendingTask]:
    """All open tasks assigned to one human, oldest first."""
    if human_id not in session.humans:
        raise NotFoundError(f"unknown human {human_id!r}")
    tasks = [t for t in session.tasks.values()
             if t.assignee == human_id and not t.closed]
    return sorted(tasks, key=lambda t: (len(t.id), t.id))


def submit_response(session: Session, task_id: str, response: dict) -> dict:
    return handle_response(session, task_id, response)


def add_job(session: Session, doc: dict) -> dict:
    """Validate and register a cleaning job; the job document goes on the audit log."""
    with session.lock:
        job = CleaningJob.from_doc(doc)
        if job.id in session.jobs:
            raise JobValidationError(f"job id {job.id!r} already exists")
        label = validate_job(job, agents=session.registry, rules=session.rules.keys(),
                             humans=session.humans.keys())
        seq = session.commit({"kind": EV_JOB_ADD, "job": job.to_doc()})
        return {"v": 1, "job": job.id, "class": label, "seq": seq}


def start_job(session: Session, job_id: str, options: dict | None = None) -> dict:
    """Run a job with optional strategy/validation/budget overrides."""
    options = options or {}
    strategy: str | None = None
    validation: ValidationStrategy | None = None
    budget: Budget | None = None
    raw_strategies = options.get("strategy") or ()
    if isinstance(raw_strategies, str):
        raw_strategies = (raw_strategies,)
    validation_variant: str | None = None
    for name in raw_strategies:
        if classify_strategy(name) == "cost":
            strategy = parse_cost_strategy(name)
        else:
            validation_variant = parse_validation_variant(name)
    raw_validation = options.get("validation")
    if raw_validation:
        validation = ValidationStrategy(
            variant=parse_validation_variant(raw_validation["variant"]),
            cell_budget=int(raw_validation.get("cell_budget", 10**9)))
    raw_budget = options.get("budget")
    if raw_budget is not None:
        raw_budget = str(raw_budget)
        if "=" in raw_budget:
            budget = Budget.parse(raw_budget)
        else:
            validation = ValidationStrategy(
                variant=validation_variant or "AggregateCoverage",
                cell_budget=int(raw_budget))
            validation_variant = None
    if validation_variant and validation is None:
        validation = ValidationStrategy(variant=validation_variant, cell_budget=10**9)
    run = _run_job(session, job_id, strategy=strategy, validation=validation, budget=budget)
    open_tasks = [t.id for t in sorted(session.tasks.values(), key=lambda t: (len(t.id), t.id))
                  if t.job == job_id and not t.closed]
    return {
        "v": 1,
        "job": job_id,
        "seq": session.seq,
        "status": run.status,
        "strategy": run.strategy,
        "overlap": list(run.overlap),
        "steps": [dict(s) for s in run.steps],
        "open_tasks": open_tasks,
    }


def factor_report(session: Session) -> dict:
    return {"v": 1, "factors": session.ledger.report_rows()}


def expertise_report(session: Session, human_id: str, task: str | None = None) -> dict:
    """Per-task-kind counters plus exact and smoothed expertise for one human."""
    if human_id not in session.humans:
        raise NotFoundError(f"unknown human {human_id!r}")
    kinds = _TASK_KINDS
    if task is not None:
        try:
            kinds = (TaskKind(task.capitalize()),)
        except ValueError:
            raise NotFoundError(f"unknown task kind {task!r}") from None
    scores = {}
    for kind in kinds:
        correct, validated = session.history.counts(human_id, None, kind)
        try:
            exact = expertise_score(session.history, human_id, None, kind)
        except UndefinedExpertiseError:
            exact = None
        scores[kind.value] = {
            "correct": correct,
            "validated": validated,
            "expertise": exact,
            "smoothed": smoothed_expertise(session.history, human_id, None, kind,
                                           prior=DEFAULT_PRIOR),
        }
    profile = session.humans[human_id]
    return {"v": 1, "human": human_id, "role": profile.role.value,
            "cost": profile.cost, "scores": scores}


def error_doc(exc: CleanloopError) -> dict:
    return {"v": 1, "error": {"code": exc.code, "message": str(exc).partition(": ")[2]}}


def http_status(exc: CleanloopError) -> int:
    return _HTTP_STATUS.get(exc.code, 400)


def create_app(session: Session) -> FastAPI:
    """Build the FastAPI app serving one session."""
    app = FastAPI(title="cleanloop gateway", version="1")
    app.state.session = session

    @app.exception_handler(CleanloopError)
    async def _cleanloop_error(_request: Request, exc: CleanloopError):
        return JSONResponse(status_code=http_status(exc), content=error_doc(exc))

    @app.get("/humans/{human_id}/tasks")
    def get_tasks(human_id: str):
        tasks = list_pending_tasks(session, human_id)
        return {"v": 1, "human": human_id, "tasks": [t.to_doc() for t in tasks]}

    @app.post("/tasks/{task_id}/response")
    async def post_response(task_id: str, request: Request):
        payload = await _body(request)
        return submit_response(session, task_id, payload)

    @app.get("/factors")
    def get_factors():
        return factor_report(session)

    @app.get("/expertise/{human_id}")
    def get_expertise(human_id: str, task: str | None = None):
        return expertise_report(session, human_id, task)

    @app.post("/jobs")
    async def post_job(request: Request):
        payload = await _body(request)
        return add_job(session, payload)

    @app.post("/jobs/{job_id}/run")
    async def post_run(job_id: str, request: Request):
        payload = await _body(request, optional=True)
        return start_job(session, job_id, payload)

    return app


async def _body(request, optional: bool = False) -> dict:
    raw = await request.body()
    if not raw:
        if optional:
            return {}
        raise JobValidationError("request body required")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise JobValidationError(f"request body is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise JobValidationError("request body must be a JSON object")
    return doc

"""Job execution: detection, overlap-aware repair planning, and validation.

A job advances through detecting, repairing, validating, done.  Automatic
agents run inline; humans get tasks, and each accepted response moves the job
forward.  The two cost strategies resolve cells assigned to both an automatic
and a human repairer: QuantitativeFirst drops overlap cells from the human
steps (cheapest), QualitativeFirst keeps them and sequences human steps after
every automatic step, so the human value always lands last.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .agents import FDDetectorAgent, build_agent
from .allocation import AssignmentProblem, PoolMember, assign_tasks, route_interaction
from .errors import (
    ConfigError,
    InfeasibleAssignmentError,
    JobValidationError,
    NotFoundError,
    PlanningError,
    ResponseMismatchError,
    TaskClosedError,
    TaskNotFoundError,
)
from .expertise import smoothed_expertise
from .model import (
    Budget,
    CellRef,
    CleaningJob,
    PendingTask,
    POOL_MARKER,
    TaskCell,
    TaskKind,
    resolve_selector,
    validate_job,
)
from .provenance import ValidationStrategy
from .store import (
    EV_DETECTION,
    EV_JOB_STATUS,
    EV_REPAIR,
    EV_TASK_CLOSE,
    EV_TASK_OPEN,
    EV_VERDICT,
    JOB_CREATED,
    JOB_DETECTING,
    JOB_DONE,
    JOB_REPAIRING,
    JOB_VALIDATING,
    JobRun,
    Session,
)

QUANTITATIVE_FIRST = "QuantitativeFirst"
QUALITATIVE_FIRST = "QualitativeFirst"
DEFAULT_STRATEGY = QUANTITATIVE_FIRST

NATURE_AUTOMATIC = "automatic"
NATURE_HUMAN = "human"

STEP_PLANNED = "planned"
STEP_APPLIED = "applied"
STEP_FAILED = "failed"
STEP_TASK_OPEN = "task-open"

RESPONSE_REPORT = "report"
RESPONSE_REPAIR = "repair"
RESPONSE_VERDICT = "verdict"

_RESPONSE_FOR_KIND = {
    TaskKind.DETECT: RESPONSE_REPORT,
    TaskKind.REPAIR: RESPONSE_REPAIR,
    TaskKind.VALIDATE: RESPONSE_VERDICT,
}

_COST_ALIASES = {
    "quantitative": QUANTITATIVE_FIRST,
    "quantitativefirst": QUANTITATIVE_FIRST,
    "qualitative": QUALITATIVE_FIRST,
    "qualitativefirst": QUALITATIVE_FIRST,
}

_VALIDATION_ALIASES = {
    "aggregate": "AggregateCoverage",
    "aggregatecoverage": "AggregateCoverage",
    "isolate": "IsolateFactors",
    "isolatefactors": "IsolateFactors",
}


def parse_cost_strategy(name: str) -> str:
    canon = _COST_ALIASES.get(name.strip().lower())
    if canon is None:
        raise ConfigError(
            f"unknown cost strategy {name!r}; expected quantitative or qualitative")
    return canon


def parse_validation_variant(name: str) -> str:
    canon = _VALIDATION_ALIASES.get(name.strip().lower())
    if canon is None:
        raise ConfigError(
            f"unknown validation strategy {name!r}; expected AggregateCoverage or IsolateFactors")
    return canon


def classify_strategy(name: str) -> str:
    """Map a CLI strategy token to 'cost' or 'validation'."""
    low = name.strip().lower()
    if low in _COST_ALIASES:
        return "cost"
    if low in _VALIDATION_ALIASES:
        return "validation"
    raise ConfigError(f"unknown strategy {name!r}")


@dataclass
class PlanStep:
    """One repair step: a single agent applied to a fixed cell set."""

    agent: str
    nature: str
    cells: list[CellRef]
    status: str = STEP_PLANNED
    error: str | None = None

    def to_doc(self) -> dict:
        doc = {
            "agent": self.agent,
            "nature": self.nature,
            "cells": [c.key() for c in self.cells],
            "status": self.status,
        }
        if self.error:
            doc["error"] = self.error
        return doc


@dataclass
class ExecutionPlan:
    job: str
    strategy: str
    steps: list[PlanStep] = field(default_factory=list)
    overlap: list[CellRef] = field(default_factory=list)
    resolution: str = ""


def overlap_cells(human_steps, automatic_steps) -> set[CellRef]:
    """Cells assigned to at least one human and at least one automatic repairer."""
    human_union: set[CellRef] = set()
    for cells in _step_values(human_steps):
        human_union.update(cells)
    auto_union: set[CellRef] = set()
    for cells in _step_values(automatic_steps):
        auto_union.update(cells)
    return human_union & auto_union


def _step_values(steps):
    if steps is None:
        return []
    if hasattr(steps, "values"):
        return list(steps.values())
    return [cells for _, cells in steps]


def plan_job(job: CleaningJob, assignments: dict[str, list[CellRef]], strategy: str,
             automatic_inputs: dict[str, list[CellRef]] | None = None,
             basis: list[CellRef] | None = None,
             cell_key=None) -> ExecutionPlan:
    """Order repair steps and resolve human/automatic overlap per the strategy.

    `assignments` maps each human repairer to the raw cell set it would handle
    (before overlap resolution); `automatic_inputs` does the same for
    automatic repairers, in invocation order.
    """
    if strategy not in (QUANTITATIVE_FIRST, QUALITATIVE_FIRST):
        raise ConfigError(f"unknown cost strategy {strategy!r}")
    automatic_inputs = automatic_inputs or {}
    basis = basis if basis is not None else []
    sort_key = cell_key or (lambda c: (c.relation, c.row_id, c.attribute))

    auto_union: set[CellRef] = set()
    for cells in automatic_inputs.values():
        auto_union.update(cells)
    human_side_requested = any(
        r == POOL_MARKER or r not in automatic_inputs for r in job.repairers)
    human_target = [c for c in basis
                    if strategy != QUANTITATIVE_FIRST or c not in auto_union]
    if human_side_requested and not assignments and human_target:
        raise PlanningError(
            f"job {job.id!r} names human repairers but no human covers any target cell")

    overlap = sorted(overlap_cells(assignments, automatic_inputs), key=sort_key)
    plan = ExecutionPlan(job=job.id, strategy=strategy)
    plan.overlap = overlap
    for agent_id, cells in automatic_inputs.items():
        if cells:
            plan.steps.append(PlanStep(agent=agent_id, nature=NATURE_AUTOMATIC,
                                       cells=sorted(cells, key=sort_key)))
    if strategy == QUANTITATIVE_FIRST:
        plan.resolution = "overlap removed from human steps"
        for human in sorted(assignments):
            kept = [c for c in assignments[human] if c not in auto_union]
            if kept:
                plan.steps.append(PlanStep(agent=human, nature=NATURE_HUMAN,
                                           cells=sorted(kept, key=sort_key)))
    else:
        plan.resolution = "human steps sequenced after automatic steps"
        for human in sorted(assignments):
            cells = list(assignments[human])
            if cells:
                plan.steps.append(PlanStep(agent=human, nature=NATURE_HUMAN,
                                           cells=sorted(cells, key=sort_key)))
    return plan


def run_job(session: Session, job_id: str, strategy: str | None = None,
            validation: ValidationStrategy | None = None,
            budget: Budget | None = None) -> JobRun:
    """Start a job and drive it as far as automatic agents allow.

    The job pauses whenever human tasks are open and resumes on each accepted
    response; a job with no human participants completes synchronously.
    """
    with session.lock:
        job = session.jobs.get(job_id)
        if job is None:
            raise NotFoundError(f"unknown job {job_id!r}")
        run = session.job_runs[job_id]
        if run.status != JOB_CREATED:
            raise JobValidationError(f"job {job_id!r} already started (status {run.status})")
        validate_job(job, agents=session.registry, rules=session.rules.keys(),
                     humans=session.humans.keys())
        chosen = parse_cost_strategy(strategy) if strategy else (
            parse_cost_strategy(job.strategy) if job.strategy else DEFAULT_STRATEGY)
        status_event = {"kind": EV_JOB_STATUS, "job": job_id,
                        "status": JOB_DETECTING, "strategy": chosen}
        if validation is not None:
            status_event["validation"] = {"variant": validation.variant,
                                          "cell_budget": validation.cell_budget}
        if budget is not None:
            run.budget_override = budget  # runtime-only; consequences are audited
        session.commit(status_event)
        _run_detection(session, job, run)
        _advance(session, job_id)
        return run


def list_open_tasks(session: Session, job_id: str, kind: TaskKind | None = None) -> list[PendingTask]:
    tasks = [t for t in session.tasks.values()
             if t.job == job_id and not t.closed and (kind is None or t.kind == kind)]
    return sorted(tasks, key=lambda t: _task_order(t.id))


def _task_order(task_id: str) -> tuple:
    if task_id.startswith("t") and task_id[1:].isdigit():
        return (0, int(task_id[1:]))
    return (1, task_id)


def _job_budget(session: Session, job: CleaningJob, run: JobRun) -> Budget | None:
    return getattr(run, "budget_override", None) or job.budget


def _run_detection(session: Session, job: CleaningJob, run: JobRun) -> None:
    scope = resolve_selector(job.cells, session.relations)
    seen: set[str] = set()
    for det in job.detectors:
        if det in seen:
            continue
        seen.add(det)
        if det in session.rules:
            agent = FDDetectorAgent(det, [session.rules[det]])
            _commit_reports(session, job, agent.detect(session.relations, scope), det)
        elif det in session.registry:
            agent = build_agent(session.registry[det], session.rules,
                                session.agent_scripts.get(det))
            _commit_reports(session, job, agent.detect(session.relations, scope), det)
        else:
            profile = session.humans[det]
            cells = sorted(set(scope) & set(resolve_selector(profile.data, session.relations)),
                           key=session.cell_order_key())
            if cells:
                _open_task(session, job, run, det, TaskKind.DETECT, cells)


def _commit_reports(session: Session, job: CleaningJob, reports, detector_id: str) -> None:
    for report in reports:
        if not report.suspects:
            continue
        key = session.cell_order_key()
        suspects = sorted(report.suspects, key=key)
        session.commit({
            "kind": EV_DETECTION,
            "job": job.id,
            "detector": detector_id,
            "suspects": [c.key() for c in suspects],
            "evidence": {c.key(): report.evidence.get(c.key(), {}) for c in suspects},
        })


def _advance(session: Session, job_id: str) -> None:
    job = session.jobs[job_id]
    run = session.job_runs[job_id]
    while True:
        if run.status == JOB_DETECTING:
            if list_open_tasks(session, job_id, TaskKind.DETECT):
                return
            _start_repairs(session, job, run)
        elif run.status == JOB_REPAIRING:
            if list_open_tasks(session, job_id, TaskKind.REPAIR):
                return
            _start_validation(session, job, run)
        elif run.status == JOB_VALIDATING:
            if list_open_tasks(session, job_id, TaskKind.VALIDATE):
                return
            session.commit({"kind": EV_JOB_STATUS, "job": job_id, "status": JOB_DONE})
            return
        else:
            return


def _repair_basis(session: Session, job: CleaningJob, run: JobRun) -> list[CellRef]:
    if job.detectors:
        cells = [CellRef.parse(k) for k in run.flagged]
    else:
        cells = resolve_selector(job.cells, session.relations)
    return sorted(set(cells), key=session.cell_order_key())


def _start_repairs(session: Session, job: CleaningJob, run: JobRun) -> None:
    strategy = run.strategy or DEFAULT_STRATEGY
    basis = _repair_basis(session, job, run)
    key = session.cell_order_key()

    job_rules = {d for d in job.detectors if d in session.rules}
    automatic_inputs: dict[str, list[CellRef]] = {}
    named_humans: list[str] = []
    wants_pool = False
    impls: dict[str, object] = {}
    for rid in job.repairers:
        if rid == POOL_MARKER:
            wants_pool = True
        elif rid in session.registry:
            desc = session.registry[rid]
            if job_rules and desc.resources and rid not in session.agent_scripts:
                # The repair phase consumes only the rules the job's detection
                # phase established; an agent's other rules wait for the job
                # that introduces them.
                desc = replace(desc, resources=tuple(
                    r for r in desc.resources if r in job_rules))
            impl = build_agent(desc, session.rules, session.agent_scripts.get(rid))
            impls[rid] = impl
            cap = impl.capability(session.relations)
            cells = basis if cap is None else [c for c in basis if c in cap]
            automatic_inputs[rid] = sorted(cells, key=key)
        elif rid not in named_humans:
            named_humans.append(rid)

    assignments: dict[str, list[CellRef]] = {}
    covered: set[CellRef] = set()
    for hid in named_humans:
        scope = set(resolve_selector(session.humans[hid].data, session.relations))
        cells = sorted(set(basis) & scope, key=key)
        if cells:
            assignments[hid] = cells
            covered.update(cells)
    if wants_pool and basis:
        auto_union = {c for cells in automatic_inputs.values() for c in cells}
        target = [c for c in basis if c not in covered]
        if strategy == QUANTITATIVE_FIRST:
            target = [c for c in target if c not in auto_union]
        if target:
            pool = [PoolMember(profile=p,
                               coverable=set(resolve_selector(p.data, session.relations)))
                    for _, p in sorted(session.humans.items())]
            reachable = {c for m in pool for c in m.coverable}
            beyond_pool = [c for c in target if c not in reachable]
            uncoverable = [c for c in beyond_pool if c not in auto_union]
            if uncoverable:
                raise InfeasibleAssignmentError(
                    "no human in the pool covers " +
                    ", ".join(c.key() for c in uncoverable[:5]),
                    uncoverable=set(uncoverable))
            target = [c for c in target if c in reachable]
            if target:
                problem = AssignmentProblem(cells=target, pool=pool, task=TaskKind.REPAIR,
                                            budget=_job_budget(session, job, run))
                result = assign_tasks(problem, session.history)
                for hid, cells in result.assigned.items():
                    merged = set(assignments.get(hid, [])) | set(cells)
                    assignments[hid] = sorted(merged, key=key)

    plan = plan_job(job, assignments, strategy,
                    automatic_inputs=automatic_inputs, basis=basis, cell_key=key)
    session.commit({
        "kind": EV_JOB_STATUS, "job": job.id, "status": JOB_REPAIRING,
        "overlap": [c.key() for c in plan.overlap],
        "steps": [s.to_doc() for s in plan.steps],
    })

    for step in plan.steps:
        if step.nature != NATURE_AUTOMATIC:
            continue
        try:
            proposal = impls[step.agent].repair(session.relations, step.cells)
            _apply_proposal(session, job, run, step.agent, proposal, step.cells)
            step.status = STEP_APPLIED
        except Exception as exc:  # a failing agent must not sink the whole job
            step.status = STEP_FAILED
            step.error = str(exc)
    for step in plan.steps:
        if step.nature != NATURE_HUMAN:
            continue
        _open_task(session, job, run, step.agent, TaskKind.REPAIR, step.cells)
        step.status = STEP_TASK_OPEN
    session.commit({
        "kind": EV_JOB_STATUS, "job": job.id, "status": JOB_REPAIRING,
        "overlap": [c.key() for c in plan.overlap],
        "steps": [s.to_doc() for s in plan.steps],
    })


def _apply_proposal(session: Session, job: CleaningJob, run: JobRun,
                    agent_id: str, proposal, scope) -> None:
    scope_set = set(scope)
    key = session.cell_order_key()
    for group in proposal.groups:
        updates = {cell: value for cell, value in group.updates}
        for cell in sorted((c for c in group.cells if c in scope_set), key=key):
            old = session.current_value(cell)
            new = updates.get(cell, old)
            flagged = run.flagged.get(cell.key(), {})
            resources = set(flagged.get("rules", ()))
            if group.rule:
                resources.add(group.rule)
            session.commit({
                "kind": EV_REPAIR,
                "cell": cell.key(),
                "old": old,
                "new": new,
                "producer": agent_id,
                "job": job.id,
                "detectors": sorted(flagged.get("detectors", ())),
                "resources": sorted(resources),
            })


def _open_task(session: Session, job: CleaningJob, run: JobRun, human: str,
               kind: TaskKind, cells: list[CellRef]) -> PendingTask:
    task_cells = []
    for cell in cells:
        value = session.current_value(cell)
        generation = session.generation(cell)
        old = new = None
        if kind == TaskKind.VALIDATE and generation > 0:
            last = session.repairs_by_cell[cell.key()][-1]
            old, new = last.old_value, last.new_value
        rel = session.relations[cell.relation]
        context = {"row_id": cell.row_id, "row": rel.row_values(cell.row_id)}
        task_cells.append(TaskCell(cell=cell, value=value, old=old, new=new,
                                   generation=generation, context=context))
    evidence = {}
    if kind != TaskKind.DETECT:
        for cell in cells:
            slot = run.flagged.get(cell.key())
            if slot:
                evidence[cell.key()] = {k: list(v) for k, v in slot.items() if v}
    task = PendingTask(id=session.next_task_id(), assignee=human, kind=kind,
                       cells=task_cells, job=job.id, evidence=evidence)
    session.commit({"kind": EV_TASK_OPEN, "job": job.id, "task": task.to_doc()})
    return session.tasks[task.id]


def _start_validation(session: Session, job: CleaningJob, run: JobRun) -> None:
    session.commit({"kind": EV_JOB_STATUS, "job": job.id, "status": JOB_VALIDATING})
    if not job.validators:
        return
    key = session.cell_order_key()
    if not job.detectors and not job.repairers:
        targets = resolve_selector(job.cells, session.relations)
    elif run.repaired:
        targets = sorted((CellRef.parse(k) for k in run.repaired), key=key)
    elif job.detectors:
        targets = sorted((CellRef.parse(k) for k in run.flagged), key=key)
    else:
        targets = []
    if not targets:
        return
    if run.validation:
        strategy = ValidationStrategy(variant=run.validation["variant"],
                                      cell_budget=int(run.validation["cell_budget"]))
        ledgered = {c.key() for c in session.ledger.cells()}
        if any(c.key() in ledgered for c in targets):
            targets = session.ledger.select_validation_targets(strategy, candidates=targets)
    named = [v for v in job.validators if v != POOL_MARKER]
    wants_pool = POOL_MARKER in job.validators
    for vid in named:
        scope = set(resolve_selector(session.humans[vid].data, session.relations))
        cells = sorted(set(targets) & scope, key=key)
        if cells:
            _open_task(session, job, run, vid, TaskKind.VALIDATE, cells)
    if wants_pool:
        pool = [PoolMember(profile=p,
                           coverable=set(resolve_selector(p.data, session.relations)))
                for _, p in sorted(session.humans.items())]
        reachable = {c for m in pool for c in m.coverable}
        pool_targets = [c for c in targets if c in reachable]
        if pool_targets:
            problem = AssignmentProblem(cells=pool_targets, pool=pool,
                                        task=TaskKind.VALIDATE,
                                        budget=_job_budget(session, job, run))
            result = assign_tasks(problem, session.history)
            for hid in sorted(result.assigned):
                cells = sorted(result.assigned[hid], key=key)
                if cells:
                    _open_task(session, job, run, hid, TaskKind.VALIDATE, cells)


def handle_response(session: Session, task_id: str, response: dict) -> dict:
    """Apply one human response: emit the audit events and advance the job."""
    with session.lock:
        task = session.tasks.get(task_id)
        if task is None:
            raise TaskNotFoundError(f"unknown task {task_id!r}")
        if task.closed:
            raise TaskClosedError(f"task {task_id!r} is already closed")
        expected = _RESPONSE_FOR_KIND.get(task.kind)
        kind = response.get("kind")
        if kind != expected:
            raise ResponseMismatchError(
                f"task {task_id!r} expects a {expected} response, got {kind!r}")
        task_keys = [tc.cell.key() for tc in task.cells]
        allowed = set(task_keys)
        job = session.jobs[task.job]
        run = session.job_runs[task.job]

        answered: set[str] = set()
        if kind == RESPONSE_REPORT:
            suspects = list(response.get("suspects", ()))
            _check_scope(task_id, suspects, allowed)
            answered.update(suspects)
            clean = response.get("clean")
            if clean is not None:
                _check_scope(task_id, clean, allowed)
                answered.update(clean)
            else:
                answered = allowed - set(response.get("abstain", ()))
            if suspects:
                ordered = sorted((CellRef.parse(k) for k in set(suspects)),
                                 key=session.cell_order_key())
                session.commit({
                    "kind": EV_DETECTION,
                    "job": task.job,
                    "detector": task.assignee,
                    "suspects": [c.key() for c in ordered],
                    "evidence": {},
                })
        elif kind == RESPONSE_REPAIR:
            values = dict(response.get("values", {}))
            _check_scope(task_id, values.keys(), allowed)
            answered.update(values)
            for tc in task.cells:
                cell_key = tc.cell.key()
                if cell_key not in values:
                    continue
                old = session.current_value(tc.cell)
                flagged = run.flagged.get(cell_key, {})
                session.commit({
                    "kind": EV_REPAIR,
                    "cell": cell_key,
                    "old": old,
                    "new": str(values[cell_key]),
                    "producer": task.assignee,
                    "job": task.job,
                    "detectors": sorted(flagged.get("detectors", ())),
                    "resources": sorted(flagged.get("rules", ())),
                })
        else:
            verdicts = dict(response.get("verdicts", {}))
            _check_scope(task_id, verdicts.keys(), allowed)
            bad = [v for v in verdicts.values() if v not in ("accurate", "inaccurate")]
            if bad:
                raise ResponseMismatchError(
                    f"task {task_id!r}: verdicts must be accurate or inaccurate, got {bad[0]!r}")
            answered.update(verdicts)
            for tc in task.cells:
                cell_key = tc.cell.key()
                if cell_key not in verdicts:
                    continue
                session.commit({
                    "kind": EV_VERDICT,
                    "cell": cell_key,
                    "generation": tc.generation,
                    "verdict": verdicts[cell_key],
                    "validator": task.assignee,
                    "job": task.job,
                    "task": task_id,
                })

        abstained = sorted(set(task_keys) - answered)
        session.commit({
            "kind": EV_TASK_CLOSE,
            "task": task_id,
            "response_kind": kind,
            "responder": task.assignee,
            "abstained": abstained,
        })
        if kind == RESPONSE_REPORT and not job.repairers:
            _route_report_followup(session, job, run, task, response)
        _advance(session, task.job)
        return {
            "v": 1,
            "task": task_id,
            "seq": session.seq,
            "job": task.job,
            "job_status": session.job_runs[task.job].status,
        }


def _check_scope(task_id: str, keys, allowed: set[str]) -> None:
    outside = [k for k in keys if k not in allowed]
    if outside:
        raise ResponseMismatchError(
            f"task {task_id!r}: cell {outside[0]!r} is outside the task scope")


def _route_report_followup(session: Session, job: CleaningJob, run: JobRun,
                           task: PendingTask, response: dict) -> None:
    """An error report with nobody downstream routes a repair task to a curator."""
    suspects = [CellRef.parse(k) for k in response.get("suspects", ())]
    if not suspects:
        return
    role = route_interaction("error-report")
    best: tuple[float, str] | None = None
    best_cells: list[CellRef] = []
    for hid in sorted(session.humans):
        profile = session.humans[hid]
        if profile.role != role or hid == task.assignee:
            continue
        scope = set(resolve_selector(profile.data, session.relations))
        cells = sorted(set(suspects) & scope, key=session.cell_order_key())
        if not cells:
            continue
        score = smoothed_expertise(session.history, hid, cells, TaskKind.REPAIR)
        rank = (-round(score, 9), hid)
        if best is None or rank < best:
            best = rank
            best_cells = cells
    if best is not None:
        _open_task(session, job, run, best[1], TaskKind.REPAIR, best_cells)

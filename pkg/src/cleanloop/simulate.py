"""Desk-scale end-to-end simulations: dirty data in, metrics out.

A simulation materializes a session directory (dirty CSVs, rules, humans,
scripted responders, agents), runs the configured jobs through the gateway
entry points, answers every open task from the scripts, and scores the final
relations against the clean ground truth.  Everything is driven by named
seeds, so identical configs produce byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .agents import run_scripted_human
from .errors import ConfigError, PlanningError
from .gateway import add_job, list_pending_tasks, start_job, submit_response
from .model import CellRef, RelationInstance
from .orchestrator import QUALITATIVE_FIRST, QUANTITATIVE_FIRST
from .provenance import render_factor_table
from .store import Session

KIND_SUBSTITUTION = "value-substitution"
KIND_FD_SWAP = "fd-breaking-swap"

_KIND_ALIASES = {
    "value-substitution": KIND_SUBSTITUTION,
    "substitution": KIND_SUBSTITUTION,
    "fd-breaking-swap": KIND_FD_SWAP,
    "fd-breaking swap": KIND_FD_SWAP,
    "fd-swap": KIND_FD_SWAP,
}

DIRTY_MARK = "~x"

_MAX_RESPONSE_ROUNDS = 1000


@dataclass(frozen=True)
class InjectionTarget:
    attribute: str
    kind: str
    rate: float
    lhs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (KIND_SUBSTITUTION, KIND_FD_SWAP):
            raise ConfigError(f"unknown error kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"error rate must be in [0,1], got {self.rate}")
        if self.kind == KIND_FD_SWAP and not self.lhs:
            raise ConfigError("fd-breaking-swap needs the lhs attributes of the rule to break")


@dataclass(frozen=True)
class ErrorInjectionSpec:
    relation: str
    targets: tuple[InjectionTarget, ...]
    seed: int = 0

    @classmethod
    def from_doc(cls, doc: dict) -> "ErrorInjectionSpec":
        targets = tuple(
            InjectionTarget(
                attribute=t["attribute"],
                kind=_KIND_ALIASES.get(str(t.get("kind", KIND_SUBSTITUTION)).lower(),
                                       str(t.get("kind"))),
                rate=float(t.get("rate", 0.0)),
                lhs=tuple(t.get("lhs", ())),
            )
            for t in doc.get("targets", ())
        )
        return cls(relation=doc["relation"], targets=targets, seed=int(doc.get("seed", 0)))


def inject_errors(clean: RelationInstance,
                  spec: ErrorInjectionSpec) -> tuple[RelationInstance, dict[CellRef, str]]:
    """Corrupt a copy of the clean relation; the returned map holds the clean
    value of exactly the modified cells."""
    if spec.relation != clean.name:
        raise ConfigError(f"injection targets relation {spec.relation!r}, got {clean.name!r}")
    dirty = clean.copy()
    truth: dict[CellRef, str] = {}
    rng = random.Random(spec.seed)
    for target in spec.targets:
        if target.attribute not in clean.attributes:
            raise ConfigError(f"unknown target attribute {target.attribute!r}")
        for a in target.lhs:
            if a not in clean.attributes:
                raise ConfigError(f"unknown target attribute {a!r}")
        count = round(target.rate * len(dirty.row_ids))
        victims = rng.sample(list(dirty.row_ids), count) if count else []
        if target.kind == KIND_SUBSTITUTION:
            for rid in victims:
                cell = CellRef(dirty.name, rid, target.attribute)
                old = dirty.value(rid, target.attribute)
                truth.setdefault(cell, old)
                dirty.set_value(rid, target.attribute, old + DIRTY_MARK)
        else:
            for rid in victims:
                donor = _pick_donor(dirty, rid, target, rng)
                if donor is None:
                    continue
                for attr in target.lhs:
                    cell = CellRef(dirty.name, rid, attr)
                    old = dirty.value(rid, attr)
                    new = dirty.value(donor, attr)
                    if old != new:
                        truth.setdefault(cell, old)
                        dirty.set_value(rid, attr, new)
    return dirty, truth


def _pick_donor(instance: RelationInstance, rid: str, target: InjectionTarget,
                rng: random.Random) -> str | None:
    """A row differing on the target attribute whose lhs values can be copied
    onto `rid` to force a violation pair."""
    own = instance.value(rid, target.attribute)
    candidates = [r for r in instance.row_ids
                  if r != rid and instance.value(r, target.attribute) != own
                  and any(instance.value(r, a) != instance.value(rid, a) for a in target.lhs)]
    if not candidates:
        return None
    return rng.choice(candidates)


@dataclass
class SimulationReport:
    seed: int
    jobs: dict[str, str] = field(default_factory=dict)
    precision: float | None = None
    recall: float | None = None
    changed_cells: int = 0
    injected_cells: int = 0
    restored_cells: int = 0
    human_tasks: dict[str, int] = field(default_factory=dict)
    total_human_cost: float = 0.0
    overlap_cells: int = 0
    overlap_accuracy: float | None = None
    factors: list[dict] = field(default_factory=list)
    script_seeds: dict[str, int] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "v": 1,
            "seed": self.seed,
            "jobs": dict(sorted(self.jobs.items())),
            "precision": self.precision,
            "recall": self.recall,
            "changed_cells": self.changed_cells,
            "injected_cells": self.injected_cells,
            "restored_cells": self.restored_cells,
            "human_tasks": dict(sorted(self.human_tasks.items())),
            "total_human_cost": self.total_human_cost,
            "overlap_cells": self.overlap_cells,
            "overlap_accuracy": self.overlap_accuracy,
            "factors": self.factors,
            "script_seeds": dict(sorted(self.script_seeds.items())),
        }

    def render(self) -> str:
        def ratio(x: float | None) -> str:
            return "n/a" if x is None else f"{x:.4f}"

        lines = [
            f"seed                {self.seed}",
            f"jobs                " + ", ".join(f"{j}={s}" for j, s in sorted(self.jobs.items())),
            f"precision           {ratio(self.precision)} ({self.changed_cells} changed)",
            f"recall              {ratio(self.recall)} ({self.restored_cells}/{self.injected_cells} restored)",
            f"human tasks         " + (", ".join(f"{h}={n}" for h, n in sorted(self.human_tasks.items())) or "none"),
            f"total human cost    {self.total_human_cost:g}",
            f"overlap accuracy    {ratio(self.overlap_accuracy)} ({self.overlap_cells} cells)",
            "",
            render_factor_table(self.factors),
        ]
        return "\n".join(lines)


def _build_relation(name: str, doc: dict) -> RelationInstance:
    return RelationInstance(name, list(doc["attributes"]),
                            [list(r) for r in doc["rows"]],
                            list(doc["row_ids"]) if doc.get("row_ids") else None)


def _write_csv(path: Path, instance: RelationInstance) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(instance.attributes)
    for row in instance.rows:
        writer.writerow(row)
    path.write_text(out.getvalue())


def materialize_session(config: dict, workdir: Path) -> tuple[Path, dict[str, dict[CellRef, str]], dict[CellRef, str]]:
    """Build the session directory: inject errors, write dirty CSVs and config.

    Returns (session dir, clean value map per relation, injected-cell truth map).
    A config `truth` map ({"Rel/row/Attr": value}) overrides clean values for
    fixtures whose relation rows are written out already dirty.
    """
    root = Session.init_directory(workdir)
    clean_values: dict[str, dict[CellRef, str]] = {}
    injected: dict[CellRef, str] = {}
    inject_doc = config.get("inject")
    spec = ErrorInjectionSpec.from_doc(inject_doc) if inject_doc else None
    overrides = {CellRef.parse(k): str(v) for k, v in config.get("truth", {}).items()}
    for name in sorted(config.get("relations", {})):
        clean = _build_relation(name, config["relations"][name])
        clean_values[name] = {c: clean.value(c.row_id, c.attribute) for c in clean.cells()}
        instance = clean
        if spec is not None and spec.relation == name:
            instance, truth = inject_errors(clean, spec)
            injected.update(truth)
        _write_csv(root / "data" / f"{name}.csv", instance)
    for cell, value in overrides.items():
        if cell.relation in clean_values and cell in clean_values[cell.relation]:
            written = clean_values[cell.relation][cell]
            clean_values[cell.relation][cell] = value
            if value != written:
                injected.setdefault(cell, value)
    if config.get("rules"):
        (root / "rules" / "rules.txt").write_text(config["rules"])
    if config.get("humans"):
        (root / "humans" / "humans.json").write_text(json.dumps(config["humans"], indent=2))
    scripts = config.get("scripts")
    if scripts:
        scripts = _fill_truth(scripts, clean_values)
        (root / "humans" / "scripts.json").write_text(json.dumps(scripts, indent=2))
    agents = config.get("agents")
    if agents:
        agents = _fill_truth_agents(agents, clean_values)
        (root / "agents.json").write_text(json.dumps(agents, indent=2))
    return root, clean_values, injected


def _full_truth_doc(clean_values: dict[str, dict[CellRef, str]]) -> dict[str, str]:
    out: dict[str, str] = {}
    for per_relation in clean_values.values():
        for cell, value in per_relation.items():
            out[cell.key()] = value
    return dict(sorted(out.items()))


def _fill_truth(scripts_doc: dict, clean_values) -> dict:
    doc = json.loads(json.dumps(scripts_doc))
    for entry in doc.get("scripts", {}).values():
        if "ground_truth" not in entry:
            entry["ground_truth"] = _full_truth_doc(clean_values)
    return doc


def _fill_truth_agents(agents_doc: dict, clean_values) -> dict:
    doc = json.loads(json.dumps(agents_doc))
    for entry in doc.get("agents", ()):
        script = entry.get("script")
        if script is not None and "ground_truth" not in script:
            script["ground_truth"] = _full_truth_doc(clean_values)
    return doc


def drive_tasks(session: Session) -> dict[str, int]:
    """Answer every open task from the session's scripts until the queues drain."""
    answered: dict[str, int] = {}
    for _ in range(_MAX_RESPONSE_ROUNDS):
        progressed = False
        for human in sorted(session.scripts):
            for task in list_pending_tasks(session, human):
                response = run_scripted_human(task, session.scripts[human], session.relations)
                submit_response(session, task.id, response.to_doc())
                answered[human] = answered.get(human, 0) + 1
                progressed = True
        if not progressed:
            break
    open_left = [t.id for t in session.tasks.values()
                 if not t.closed and t.assignee in session.scripts]
    if open_left:
        raise PlanningError(f"scripted humans could not drain tasks {open_left}")
    return answered


def run_simulation(config: dict, workdir: str | Path,
                   strategy_override: str | None = None) -> SimulationReport:
    """Execute the configured jobs end to end and score the outcome."""
    workdir = Path(workdir)
    root, clean_values, injected = materialize_session(config, workdir)
    session = Session.open_directory(root)
    try:
        report = SimulationReport(seed=int(config.get("seed", 0)))
        for human, script in sorted(session.scripts.items()):
            report.script_seeds[human] = script.seed
        dirty_base = {name: rel.copy() for name, rel in session.base.items()}
        for job_doc in config.get("jobs", ()):
            add_job(session, job_doc)
        runs = config.get("runs") or [{"job": j["id"]} for j in config.get("jobs", ())]
        for run_spec in runs:
            options = {k: v for k, v in run_spec.items() if k != "job"}
            if strategy_override is not None:
                strategies = options.get("strategy") or ()
                if isinstance(strategies, str):
                    strategies = (strategies,)
                options["strategy"] = [s for s in strategies
                                       if s.lower().startswith(("aggregate", "isolate"))]
                options["strategy"].append(strategy_override)
            start_job(session, run_spec["job"], options)
            drive_tasks(session)
        _score(session, report, clean_values, injected, dirty_base)
        return report
    finally:
        session.close()


def _score(session: Session, report: SimulationReport, clean_values, injected,
           dirty_base: dict[str, RelationInstance]) -> None:
    for job_id, run in session.job_runs.items():
        report.jobs[job_id] = run.status
    changed: list[CellRef] = []
    correct_changed = 0
    for name, rel in session.relations.items():
        base = dirty_base[name]
        for cell in rel.cells():
            now = rel.value(cell.row_id, cell.attribute)
            if now != base.value(cell.row_id, cell.attribute):
                changed.append(cell)
                if now == clean_values[name][cell]:
                    correct_changed += 1
    report.changed_cells = len(changed)
    report.precision = (correct_changed / len(changed)) if changed else None
    report.injected_cells = len(injected)
    if injected:
        restored = sum(
            1 for cell, value in injected.items()
            if session.relations[cell.relation].value(cell.row_id, cell.attribute) == value)
        report.restored_cells = restored
        report.recall = restored / len(injected)
    tasks_per_human: dict[str, int] = {}
    cost = 0.0
    for task in session.tasks.values():
        tasks_per_human[task.assignee] = tasks_per_human.get(task.assignee, 0) + 1
        profile = session.humans.get(task.assignee)
        if profile is not None:
            cost += profile.cost
    report.human_tasks = tasks_per_human
    report.total_human_cost = cost
    overlap_keys: set[str] = set()
    for run in session.job_runs.values():
        overlap_keys.update(run.overlap)
    report.overlap_cells = len(overlap_keys)
    if overlap_keys:
        good = 0
        for key in overlap_keys:
            cell = CellRef.parse(key)
            now = session.relations[cell.relation].value(cell.row_id, cell.attribute)
            if now == clean_values[cell.relation][cell]:
                good += 1
        report.overlap_accuracy = good / len(overlap_keys)
    report.factors = session.ledger.report_rows()


def compare_strategies(config: dict, workdir: str | Path) -> dict:
    """Run both cost strategies on identical dirty data and report the deltas."""
    workdir = Path(workdir)
    quant = run_simulation(config, workdir / "quantitative",
                           strategy_override=QUANTITATIVE_FIRST)
    qual = run_simulation(config, workdir / "qualitative",
                          strategy_override=QUALITATIVE_FIRST)
    deltas = {
        "overlap_accuracy": _delta(qual.overlap_accuracy, quant.overlap_accuracy),
        "total_human_cost": qual.total_human_cost - quant.total_human_cost,
        "human_tasks": sum(qual.human_tasks.values()) - sum(quant.human_tasks.values()),
    }
    return {
        "v": 1,
        "quantitative": quant.to_doc(),
        "qualitative": qual.to_doc(),
        "deltas": deltas,
    }


def _delta(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return a - b

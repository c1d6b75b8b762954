"""Session state, CSV ingestion, and the append-only audit log.

The audit log is the single source of truth: every mutation is committed as
one self-delimited JSON line and applied to in-memory state by the same code
path that replays the log.  Replaying audit events over the ingestion
snapshot therefore reproduces relations, task queues, expertise history, and
the factor ledger exactly.  Events never carry wall-clock time; sequence
numbers order everything, which keeps replays and reports byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .agents import FDRule, HumanScript, load_scripts, load_truth_csv, parse_rules
from .errors import AuditError, ConfigError, IngestError, NotFoundError, RestoreError, SchemaError
from .expertise import HumanProfile, TaskHistory, load_human_pool, OUTCOME_CORRECT, OUTCOME_INCORRECT
from .model import (
    AgentDescriptor,
    CellRef,
    CellSelector,
    CleaningJob,
    PendingTask,
    RelationInstance,
    RepairEvent,
    TaskKind,
    cell_sort_key,
    DOC_VERSION,
)
from .provenance import (
    FACTOR_DETECTOR,
    FACTOR_REPAIRER,
    FACTOR_VALIDATOR,
    FactorLedger,
    render_factor_table,
    VERDICT_ACCURATE,
)

SESSION_ENV_VAR = "CLEANLOOP_SESSION"

EV_JOB_ADD = "job_add"
EV_JOB_STATUS = "job_status"
EV_DETECTION = "detection"
EV_TASK_OPEN = "task_open"
EV_TASK_CLOSE = "task_close"
EV_REPAIR = "repair"
EV_VERDICT = "verdict"

JOB_CREATED = "created"
JOB_DETECTING = "detecting"
JOB_REPAIRING = "repairing"
JOB_VALIDATING = "validating"
JOB_DONE = "done"

_FACTOR_TASK_KIND = {
    FACTOR_DETECTOR: TaskKind.DETECT,
    FACTOR_REPAIRER: TaskKind.REPAIR,
    FACTOR_VALIDATOR: TaskKind.VALIDATE,
}


def ingest_csv(text: str, relation_name: str) -> RelationInstance:
    """Parse one RFC-4180 CSV document into a relation with row ids r1..rn."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"relation {relation_name!r}: empty file, header row required") from None
    header = [h for h in header]
    if not header or all(not h.strip() for h in header):
        raise IngestError(f"relation {relation_name!r}: header row is empty")
    rows: list[list[str]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestError(
                f"relation {relation_name!r}: row at line {lineno} has {len(row)} values, "
                f"expected {len(header)}")
        rows.append([v for v in row])
    try:
        return RelationInstance(relation_name, header, rows)
    except SchemaError:
        raise


@dataclass
class JobRun:
    """Runtime status of one job, rebuilt purely from audit events."""

    job: str
    status: str = JOB_CREATED
    strategy: str | None = None
    validation: dict | None = None
    flagged: dict[str, dict] = field(default_factory=dict)  # cell key -> {rules, detectors, partners}
    repaired: list[str] = field(default_factory=list)  # cell keys, first-repair order
    steps: list[dict] = field(default_factory=list)
    overlap: list[str] = field(default_factory=list)

    def flagged_cells(self) -> set[str]:
        return set(self.flagged)


class Session:
    """One cleaning session: relations, registry, humans, jobs, and derived state."""

    def __init__(self):
        self.relations: dict[str, RelationInstance] = {}
        self.base: dict[str, RelationInstance] = {}
        self.rules: dict[str, FDRule] = {}
        self.registry: dict[str, AgentDescriptor] = {}
        self.agent_scripts: dict[str, HumanScript] = {}
        self.humans: dict[str, HumanProfile] = {}
        self.scripts: dict[str, HumanScript] = {}
        self.jobs: dict[str, CleaningJob] = {}
        self.job_runs: dict[str, JobRun] = {}
        self.history = TaskHistory()
        self.ledger = FactorLedger()
        self.tasks: dict[str, PendingTask] = {}
        self.repair_log: list[RepairEvent] = []
        self.repairs_by_cell: dict[str, list[RepairEvent]] = {}
        self.audit: list[dict] = []
        self.seq = 0
        self._task_counter = 0
        self.lock = threading.RLock()
        self.directory: Path | None = None
        self._audit_handle = None

    # -- configuration ----------------------------------------------------

    def add_relation(self, instance: RelationInstance) -> None:
        if instance.name in self.relations:
            raise SchemaError(f"relation {instance.name!r} already ingested")
        self.relations[instance.name] = instance
        self.base[instance.name] = instance.copy()
        self.ledger.set_attribute_order(instance.name, instance.attributes)

    def add_rules(self, rules: dict[str, FDRule]) -> None:
        for rid, rule in rules.items():
            if rid in self.rules:
                raise ConfigError(f"duplicate rule id {rid!r}")
            self.rules[rid] = rule

    def add_humans(self, humans: dict[str, HumanProfile]) -> None:
        for hid, profile in humans.items():
            if hid in self.humans:
                raise ConfigError(f"duplicate human id {hid!r}")
            self.humans[hid] = profile

    def add_agent(self, desc: AgentDescriptor, script: HumanScript | None = None) -> None:
        if desc.id in self.registry:
            raise ConfigError(f"duplicate agent id {desc.id!r}")
        self.registry[desc.id] = desc
        if script is not None:
            self.agent_scripts[desc.id] = script

    def cell_order_key(self):
        return cell_sort_key(self.relations)

    def current_value(self, cell: CellRef) -> str:
        rel = self.relations.get(cell.relation)
        if rel is None or not rel.has_row(cell.row_id) or cell.attribute not in rel.attributes:
            raise NotFoundError(f"unknown cell {cell.key()}")
        return rel.value(cell.row_id, cell.attribute)

    def generation(self, cell: CellRef) -> int:
        return len(self.repairs_by_cell.get(cell.key(), []))

    def next_task_id(self) -> str:
        return f"t{self._task_counter + 1}"

    # -- audit log ---------------------------------------------------------

    def commit(self, event: dict) -> int:
        """Assign the next sequence number, persist the event, apply it.  Returns the sequence."""
        with self.lock:
            self.seq += 1
            event = dict(event)
            event["seq"] = self.seq
            line = json.dumps(event, sort_keys=True, separators=(",", ":"))
            if self._audit_handle is not None:
                self._audit_handle.write(line + "\n")
                self._audit_handle.flush()
                os.fsync(self._audit_handle.fileno())
            self.audit.append(event)
            self._apply(event)
            return self.seq

    def replay(self, events: list[dict]) -> None:
        for event in events:
            expected = self.seq + 1
            if event.get("seq") != expected:
                raise AuditError(f"audit sequence gap: expected {expected}, got {event.get('seq')}")
            self.seq = event["seq"]
            self.audit.append(event)
            self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event.get("kind")
        if kind == EV_JOB_ADD:
            job = CleaningJob.from_doc(event["job"])
            self.jobs[job.id] = job
            self.job_runs[job.id] = JobRun(job=job.id)
        elif kind == EV_JOB_STATUS:
            run = self.job_runs[event["job"]]
            run.status = event["status"]
            if "strategy" in event:
                run.strategy = event["strategy"]
            if "validation" in event:
                run.validation = dict(event["validation"])
            if "overlap" in event:
                run.overlap = list(event["overlap"])
            if "steps" in event:
                run.steps = [dict(s) for s in event["steps"]]
        elif kind == EV_DETECTION:
            run = self.job_runs[event["job"]]
            detector = event["detector"]
            for cell_key in event["suspects"]:
                slot = run.flagged.setdefault(
                    cell_key, {"rules": [], "detectors": [], "partners": []})
                ev = event.get("evidence", {}).get(cell_key, {})
                for rid in ev.get("rules", ()):
                    if rid not in slot["rules"]:
                        slot["rules"].append(rid)
                if detector in self.rules:
                    if detector not in slot["rules"]:
                        slot["rules"].append(detector)
                elif detector not in slot["detectors"]:
                    slot["detectors"].append(detector)
                for partner in ev.get("partners", ()):
                    if partner not in slot["partners"]:
                        slot["partners"].append(partner)
        elif kind == EV_TASK_OPEN:
            task = PendingTask.from_doc(event["task"])
            self.tasks[task.id] = task
            if task.id.startswith("t") and task.id[1:].isdigit():
                self._task_counter = max(self._task_counter, int(task.id[1:]))
        elif kind == EV_TASK_CLOSE:
            task = self.tasks.get(event["task"])
            if task is None:
                raise AuditError(f"task_close for unknown task {event['task']!r}")
            task.closed = True
        elif kind == EV_REPAIR:
            self._apply_repair(event)
        elif kind == EV_VERDICT:
            self._apply_verdict(event)
        else:
            raise AuditError(f"unknown audit event kind {kind!r}")

    def _apply_repair(self, event: dict) -> None:
        cell = CellRef.parse(event["cell"])
        rel = self.relations.get(cell.relation)
        if rel is None:
            raise AuditError(f"repair for unknown relation {cell.relation!r}")
        current = rel.value(cell.row_id, cell.attribute)
        if current != event["old"]:
            raise AuditError(
                f"audit mismatch at seq {event['seq']}: {cell.key()} holds {current!r}, "
                f"event expects {event['old']!r}")
        rel.set_value(cell.row_id, cell.attribute, event["new"])
        repair = RepairEvent(cell=cell, old_value=event["old"], new_value=event["new"],
                             producer=event["producer"], job=event["job"],
                             sequence=event["seq"])
        self.repair_log.append(repair)
        self.repairs_by_cell.setdefault(cell.key(), []).append(repair)
        generation = len(self.repairs_by_cell[cell.key()])
        detectors = {d: FACTOR_DETECTOR for d in event.get("detectors", ())}
        self.ledger.record_repair_factors(
            cell, generation,
            detectors=detectors,
            repairer=event["producer"],
            resources=list(event.get("resources", ())))
        run = self.job_runs.get(event["job"])
        if run is not None and cell.key() not in run.repaired:
            run.repaired.append(cell.key())

    def _apply_verdict(self, event: dict) -> None:
        cell = CellRef.parse(event["cell"])
        generation = event["generation"]
        verdict = event["verdict"]
        validator = event["validator"]
        if generation == 0 or (cell.key(), generation) not in self.ledger.entries:
            # Verdict on a never-repaired cell: audited, but there is no provenance to score.
            return
        factors = self.ledger.accumulated_factors(cell, generation)
        self.ledger.apply_validation(cell, generation, verdict, validator)
        outcome = OUTCOME_CORRECT if verdict == VERDICT_ACCURATE else OUTCOME_INCORRECT
        for fid in sorted(factors):
            if fid not in self.humans:
                continue
            task_kind = _FACTOR_TASK_KIND.get(factors[fid])
            if task_kind is None:
                continue
            self.history.record_outcome(fid, cell, task_kind, outcome)

    # -- digests and snapshots ----------------------------------------------

    def relations_digest(self) -> str:
        out = io.StringIO()
        for name in sorted(self.relations):
            rel = self.relations[name]
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow([name])
            writer.writerow(["row_id", *rel.attributes])
            for rid in rel.row_ids:
                writer.writerow([rid, *rel.rows[rel.row_pos(rid)]])
        return out.getvalue()

    def expertise_digest(self) -> str:
        lines = []
        kinds = [TaskKind.DETECT, TaskKind.REPAIR, TaskKind.VALIDATE, TaskKind.SPECIFY]
        for hid in sorted(self.humans):
            for kind in kinds:
                correct, validated = self.history.counts(hid, None, kind)
                if validated:
                    lines.append(f"{hid} {kind.value} {correct}/{validated}")
        return "\n".join(lines)

    def factor_digest(self) -> str:
        return render_factor_table(self.ledger.report_rows())

    def state_digest(self) -> str:
        """Canonical rendering of all replay-determined state, for byte comparison."""
        tasks = "\n".join(
            f"{tid} {t.assignee} {t.kind.value} {t.job} {'closed' if t.closed else 'open'}"
            for tid, t in sorted(self.tasks.items()))
        return "\n===\n".join([
            self.relations_digest(),
            self.expertise_digest(),
            self.factor_digest(),
            tasks,
        ])

    def snapshot(self) -> bytes:
        """Serialize config, ingestion snapshot, and audit log.  Restore replays."""
        doc = {
            "v": DOC_VERSION,
            "relations": {
                name: {
                    "attributes": rel.attributes,
                    "rows": rel.rows,
                    "row_ids": rel.row_ids,
                }
                for name, rel in sorted(self.base.items())
            },
            "rules": [
                {"id": r.id, "relation": r.relation, "lhs": list(r.lhs), "rhs": list(r.rhs)}
                for r in sorted(self.rules.values(), key=lambda r: r.id)
            ],
            "humans": [self.humans[h].to_doc() for h in sorted(self.humans)],
            "scripts": {
                hid: _script_doc(script) for hid, script in sorted(self.scripts.items())
            },
            "agents": [
                {
                    "id": d.id, "kind": d.kind, "nature": d.nature,
                    "rules": list(d.resources),
                    **({"script": _script_doc(self.agent_scripts[d.id])}
                       if d.id in self.agent_scripts else {}),
                }
                for d in sorted(self.registry.values(), key=lambda d: d.id)
            ],
            "audit": self.audit,
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")

    @classmethod
    def restore(cls, payload: bytes) -> "Session":
        if not payload:
            raise RestoreError("empty snapshot payload")
        try:
            doc = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RestoreError(f"corrupt snapshot: {exc}") from None
        if not isinstance(doc, dict) or doc.get("v") != DOC_VERSION:
            raise RestoreError("snapshot missing version marker")
        session = cls()
        try:
            for name in sorted(doc.get("relations", {})):
                spec = doc["relations"][name]
                session.add_relation(RelationInstance(
                    name, spec["attributes"], spec["rows"], spec["row_ids"]))
            session.add_rules({
                r["id"]: FDRule(r["id"], r["relation"], tuple(r["lhs"]), tuple(r["rhs"]))
                for r in doc.get("rules", ())
            })
            session.add_humans({h["id"]: HumanProfile.from_doc(h) for h in doc.get("humans", ())})
            for hid, sdoc in sorted(doc.get("scripts", {}).items()):
                session.scripts[hid] = _script_from_doc(hid, sdoc)
            for adoc in doc.get("agents", ()):
                desc = AgentDescriptor(id=adoc["id"], kind=adoc["kind"],
                                       nature=adoc.get("nature", "automatic"),
                                       resources=tuple(adoc.get("rules", adoc.get("resources", ()))))
                script = _script_from_doc(adoc["id"], adoc["script"]) if "script" in adoc else None
                session.add_agent(desc, script)
            session.replay(doc.get("audit", []))
        except RestoreError:
            raise
        except Exception as exc:
            raise RestoreError(f"corrupt snapshot: {exc}") from None
        return session

    # -- session directory ---------------------------------------------------

    @classmethod
    def init_directory(cls, root: str | Path) -> Path:
        """Create the session directory skeleton: data/, jobs/, rules/, humans/, audit.log."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for sub in ("data", "jobs", "rules", "humans"):
            (root / sub).mkdir(exist_ok=True)
        audit = root / "audit.log"
        if not audit.exists():
            audit.touch()
        pool = root / "humans" / "humans.json"
        if not pool.exists():
            pool.write_text(json.dumps({"v": DOC_VERSION, "humans": []}, indent=2) + "\n")
        return root

    @classmethod
    def open_directory(cls, root: str | Path) -> "Session":
        """Load config and data, then replay audit.log."""
        root = Path(root)
        if not root.is_dir():
            raise NotFoundError(f"session directory {str(root)!r} does not exist")
        session = cls()
        session.directory = root
        for rules_file in sorted((root / "rules").glob("*")):
            if rules_file.is_file():
                session.add_rules(parse_rules(rules_file.read_text()))
        pool_file = root / "humans" / "humans.json"
        if pool_file.exists():
            session.add_humans(load_human_pool(pool_file.read_text()))
        scripts_file = root / "humans" / "scripts.json"
        if scripts_file.exists():
            loader = _truth_loader(root)
            try:
                doc = json.loads(scripts_file.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"scripts.json is not valid JSON: {exc}") from None
            session.scripts.update(load_scripts(doc, truth_loader=loader))
        agents_file = root / "agents.json"
        if agents_file.exists():
            try:
                agents_doc = json.loads(agents_file.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"agents.json is not valid JSON: {exc}") from None
            for adoc in agents_doc.get("agents", ()):
                desc = AgentDescriptor(id=adoc["id"], kind=adoc["kind"],
                                       nature=adoc.get("nature", "automatic"),
                                       resources=tuple(adoc.get("rules", adoc.get("resources", ()))))
                script = None
                if "script" in adoc:
                    script = _script_from_doc(adoc["id"], adoc["script"], loader=_truth_loader(root))
                session.add_agent(desc, script)
        for csv_file in sorted((root / "data").glob("*.csv")):
            session.add_relation(ingest_csv(csv_file.read_text(), csv_file.stem))
        audit_file = root / "audit.log"
        events = []
        if audit_file.exists():
            for lineno, line in enumerate(audit_file.read_text().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise AuditError(f"corrupt audit line {lineno}: {exc}") from None
        session.replay(events)
        session._audit_handle = open(audit_file, "a", encoding="utf-8")
        return session

    def close(self) -> None:
        if self._audit_handle is not None:
            self._audit_handle.close()
            self._audit_handle = None


def _script_doc(script: HumanScript) -> dict:
    return {
        "coverage": script.coverage.to_doc(),
        "error_rate": script.error_rate,
        "seed": script.seed,
        "ground_truth": {c.key(): v for c, v in sorted(script.ground_truth.items(),
                                                       key=lambda kv: kv[0].key())},
    }


def _script_from_doc(human: str, doc: dict, loader=None) -> HumanScript:
    raw_truth = doc.get("ground_truth", {})
    if isinstance(raw_truth, str):
        if loader is None:
            raise ConfigError(f"script for {human!r} references a truth file but no loader given")
        truth = dict(loader(raw_truth))
    else:
        truth = {CellRef.parse(k): str(v) for k, v in raw_truth.items()}
    coverage = doc.get("coverage", ["*"])
    if isinstance(coverage, str):
        coverage = [coverage]
    return HumanScript(human=human, ground_truth=truth,
                       error_rate=float(doc.get("error_rate", 0.0)),
                       coverage=CellSelector.parse(coverage),
                       seed=int(doc.get("seed", 0)))


def _truth_loader(root: Path):
    def load(ref: str):
        path = (root / ref) if not Path(ref).is_absolute() else Path(ref)
        if not path.exists():
            path = root / "humans" / ref
        if not path.exists():
            raise ConfigError(f"ground-truth file {ref!r} not found in session directory")
        return load_truth_csv(path.read_text())

    return load

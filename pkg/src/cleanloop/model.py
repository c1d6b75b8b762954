"""Core domain model: relations, cell addressing, selectors, jobs, and budgets.

Cell values are opaque strings; typed interpretation belongs to agents.  All
deterministic orderings used anywhere in the engine come from
:func:`cell_sort_key`: relation name, then row position at ingestion, then
attribute position in the schema.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping

from .errors import JobValidationError, SchemaError, SelectorError

DOC_VERSION = 1

# Marker usable in a job's repairers/validators lists: "draw from the human pool".
POOL_MARKER = "H"

GLOBAL_WILDCARD = "*"

_COLUMN_TERM = re.compile(r"^(?P<relation>[^\[\]/]+)\[(?P<attribute>[^\[\]/]+)\]=\*$")
_CELL_TERM = re.compile(r"^(?P<relation>[^/]+)/(?P<row>[^/]+)/(?P<attribute>[^/]+)$")


class Role(str, Enum):
    DATA_USER = "DataUser"
    DATA_CURATOR = "DataCurator"
    DATA_VALIDATOR = "DataValidator"
    DOMAIN_EXPERT = "DomainExpert"


class TaskKind(str, Enum):
    DETECT = "Detect"
    REPAIR = "Repair"
    VALIDATE = "Validate"
    SPECIFY = "Specify"


@dataclass(frozen=True, order=True)
class CellRef:
    """Address of one cell t[A]: (relation, row id, attribute)."""

    relation: str
    row_id: str
    attribute: str

    def key(self) -> str:
        return f"{self.relation}/{self.row_id}/{self.attribute}"

    @classmethod
    def parse(cls, token: str) -> "CellRef":
        m = _CELL_TERM.match(token)
        if not m:
            raise SelectorError(f"malformed cell reference {token!r}")
        return cls(m.group("relation"), m.group("row"), m.group("attribute"))


class RelationInstance:
    """One ingested relation: ordered attributes, ordered rows, stable row ids."""

    def __init__(self, name: str, attributes: list[str], rows: list[list[str]],
                 row_ids: list[str] | None = None):
        if len(set(attributes)) != len(attributes):
            raise SchemaError(f"duplicate attribute names in relation {name!r}")
        self.name = name
        self.attributes = list(attributes)
        self.rows = [list(r) for r in rows]
        for i, row in enumerate(self.rows):
            if len(row) != len(attributes):
                raise SchemaError(
                    f"relation {name!r} row {i + 1} has {len(row)} values, expected {len(attributes)}")
        self.row_ids = list(row_ids) if row_ids is not None else [f"r{i + 1}" for i in range(len(rows))]
        if len(set(self.row_ids)) != len(self.row_ids) or len(self.row_ids) != len(self.rows):
            raise SchemaError(f"relation {name!r} row ids must be unique, one per row")
        self._row_pos = {rid: i for i, rid in enumerate(self.row_ids)}
        self._attr_pos = {a: i for i, a in enumerate(self.attributes)}

    def has_row(self, row_id: str) -> bool:
        return row_id in self._row_pos

    def row_pos(self, row_id: str) -> int:
        return self._row_pos[row_id]

    def attr_pos(self, attribute: str) -> int:
        return self._attr_pos[attribute]

    def value(self, row_id: str, attribute: str) -> str:
        return self.rows[self._row_pos[row_id]][self._attr_pos[attribute]]

    def set_value(self, row_id: str, attribute: str, value: str) -> None:
        self.rows[self._row_pos[row_id]][self._attr_pos[attribute]] = value

    def row_values(self, row_id: str) -> dict[str, str]:
        row = self.rows[self._row_pos[row_id]]
        return dict(zip(self.attributes, row))

    def cells(self) -> Iterator[CellRef]:
        for rid in self.row_ids:
            for attr in self.attributes:
                yield CellRef(self.name, rid, attr)

    def copy(self) -> "RelationInstance":
        return RelationInstance(self.name, self.attributes, self.rows, self.row_ids)


def cell_sort_key(relations: Mapping[str, RelationInstance]):
    """Canonical cell ordering: relation name, row position, attribute position."""

    def key(cell: CellRef):
        rel = relations.get(cell.relation)
        if rel is None or not rel.has_row(cell.row_id) or cell.attribute not in rel.attributes:
            # Unknown cells sort after known ones; resolution errors are raised elsewhere.
            return (cell.relation, 1, 0, cell.row_id, 0, cell.attribute)
        return (cell.relation, 0, rel.row_pos(cell.row_id), "", rel.attr_pos(cell.attribute), "")

    return key


@dataclass(frozen=True)
class CellSelector:
    """Declarative cell set: a union of pattern terms.

    Term spellings: ``*`` (every cell of every relation),
    ``Rel[Attr]=*`` (one column), ``Rel`` (whole relation),
    ``Rel/row/Attr`` (one explicit cell).
    """

    terms: tuple[str, ...]

    @classmethod
    def parse(cls, raw: str | Iterable[str]) -> "CellSelector":
        if isinstance(raw, str):
            raw = [raw]
        terms = tuple(str(t).strip() for t in raw)
        if any(not t for t in terms):
            raise SelectorError("empty selector term")
        return cls(terms)

    def is_empty(self) -> bool:
        return not self.terms

    def to_doc(self) -> list[str]:
        return list(self.terms)


def resolve_selector(selector: CellSelector,
                     relations: Mapping[str, RelationInstance]) -> list[CellRef]:
    """Resolve a selector to the ordered, de-duplicated list of cells it denotes.

    Deterministic: same session state yields the identical ordered list.
    Unknown relations, attributes, or rows in explicit terms raise
    SelectorError naming the offending token.
    """
    out: set[CellRef] = set()
    for term in selector.terms:
        if term == GLOBAL_WILDCARD:
            for rel in relations.values():
                out.update(rel.cells())
            continue
        m = _COLUMN_TERM.match(term)
        if m:
            rel = relations.get(m.group("relation"))
            if rel is None:
                raise SelectorError(f"unknown relation in selector term {term!r}")
            attr = m.group("attribute")
            if attr not in rel.attributes:
                raise SelectorError(f"unknown attribute in selector term {term!r}")
            out.update(CellRef(rel.name, rid, attr) for rid in rel.row_ids)
            continue
        m = _CELL_TERM.match(term)
        if m:
            rel = relations.get(m.group("relation"))
            if rel is None:
                raise SelectorError(f"unknown relation in selector term {term!r}")
            if not rel.has_row(m.group("row")):
                raise SelectorError(f"unknown row in selector term {term!r}")
            if m.group("attribute") not in rel.attributes:
                raise SelectorError(f"unknown attribute in selector term {term!r}")
            out.add(CellRef(rel.name, m.group("row"), m.group("attribute")))
            continue
        if "[" in term or "/" in term or "]" in term or "=" in term:
            raise SelectorError(f"malformed selector term {term!r}")
        rel = relations.get(term)
        if rel is None:
            raise SelectorError(f"unknown relation in selector term {term!r}")
        out.update(rel.cells())
    return sorted(out, key=cell_sort_key(relations))


BUDGET_MAX_HUMANS = "max-humans"
BUDGET_MAX_COST = "max-total-cost"


@dataclass(frozen=True)
class Budget:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in (BUDGET_MAX_HUMANS, BUDGET_MAX_COST):
            raise JobValidationError(f"unknown budget kind {self.kind!r}")
        if self.value < 0:
            raise JobValidationError("budget value must be non-negative")
        if self.kind == BUDGET_MAX_HUMANS and int(self.value) != self.value:
            raise JobValidationError("max-humans budget must be an integer")

    @classmethod
    def parse(cls, text: str) -> "Budget":
        kind, sep, value = text.partition("=")
        if not sep:
            raise JobValidationError(f"budget must look like kind=value, got {text!r}")
        try:
            num = float(value)
        except ValueError:
            raise JobValidationError(f"budget value {value!r} is not a number") from None
        return cls(kind.strip(), num)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_doc(cls, doc: dict) -> "Budget":
        return cls(doc["kind"], doc["value"])


@dataclass(frozen=True)
class AgentDescriptor:
    """Registered automatic agent: what it is and which rule resources it consumes."""

    id: str
    kind: str  # "detector" | "repairer"
    nature: str = "automatic"  # "automatic" | "human"
    resources: tuple[str, ...] = ()


@dataclass(frozen=True)
class RepairEvent:
    """One audited cell update; old and new may be equal when a repairer confirms a value."""

    cell: CellRef
    old_value: str
    new_value: str
    producer: str
    job: str
    sequence: int


@dataclass(frozen=True)
class CleaningJob:
    """The cleaning-job quadruplet: cells, detectors, repairers, validators."""

    id: str
    cells: CellSelector
    detectors: tuple[str, ...] = ()
    repairers: tuple[str, ...] = ()
    validators: tuple[str, ...] = ()
    budget: Budget | None = None
    strategy: str | None = None

    def to_doc(self) -> dict:
        doc = {
            "v": DOC_VERSION,
            "id": self.id,
            "cells": self.cells.to_doc(),
            "detectors": list(self.detectors),
            "repairers": list(self.repairers),
            "validators": list(self.validators),
        }
        if self.budget is not None:
            doc["budget"] = self.budget.to_doc()
        if self.strategy is not None:
            doc["strategy"] = self.strategy
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "CleaningJob":
        if not isinstance(doc, dict) or "id" not in doc:
            raise JobValidationError("job document must be an object with an 'id'")
        cells = doc.get("cells", [])
        if isinstance(cells, str):
            cells = [cells]
        budget = doc.get("budget")
        return cls(
            id=str(doc["id"]),
            cells=CellSelector.parse(cells) if cells else CellSelector(()),
            detectors=tuple(doc.get("detectors", ())),
            repairers=tuple(doc.get("repairers", ())),
            validators=tuple(doc.get("validators", ())),
            budget=Budget.from_doc(budget) if budget else None,
            strategy=doc.get("strategy"),
        )


_CLASS_PARTS = (("detectors", "detect"), ("repairers", "repair"), ("validators", "validate"))


def validate_job(job: CleaningJob, *, agents: Mapping[str, AgentDescriptor],
                 rules: Iterable[str], humans: Iterable[str]) -> str:
    """Check a job against the session registry and return its class label.

    Detector ids may name registered detector agents, FD rules (implicit
    detectors), or humans.  Repairers may name repairer agents, humans, or the
    pool marker H.  Validators may name humans or H.
    """
    rules = set(rules)
    humans = set(humans)
    if job.cells.is_empty():
        raise JobValidationError(f"job {job.id!r}: empty-cells, C cannot be empty")
    if not (job.detectors or job.repairers or job.validators):
        raise JobValidationError(f"job {job.id!r}: detectors, repairers, and validators all empty")
    for did in job.detectors:
        if did == POOL_MARKER:
            raise JobValidationError(f"job {job.id!r}: pool marker H is not valid for detectors")
        ok = (did in rules or did in humans
              or (did in agents and agents[did].kind == "detector"))
        if not ok:
            raise JobValidationError(f"job {job.id!r}: unknown detector {did!r}")
    for rid in job.repairers:
        if rid == POOL_MARKER:
            continue
        ok = rid in humans or (rid in agents and agents[rid].kind == "repairer")
        if not ok:
            raise JobValidationError(f"job {job.id!r}: unknown repairer {rid!r}")
    for vid in job.validators:
        if vid == POOL_MARKER:
            continue
        if vid not in humans:
            raise JobValidationError(f"job {job.id!r}: unknown validator {vid!r}")
    parts = [label for attr, label in _CLASS_PARTS if getattr(job, attr)]
    return "+".join(parts)


@dataclass
class TaskCell:
    """One cell inside a pending task, with enough context to answer without file access."""

    cell: CellRef
    value: str
    old: str
    new: str
    generation: int
    context: dict[str, str] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "relation": self.cell.relation,
            "row": self.cell.row_id,
            "attribute": self.cell.attribute,
            "value": self.value,
            "old": self.old,
            "new": self.new,
            "generation": self.generation,
            "context": dict(self.context),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TaskCell":
        return cls(
            cell=CellRef(doc["relation"], doc["row"], doc["attribute"]),
            value=doc["value"], old=doc["old"], new=doc["new"],
            generation=doc["generation"], context=dict(doc.get("context", {})),
        )


@dataclass
class PendingTask:
    """One unit of human work: a bundle of cells for one assignee under one job."""

    id: str
    assignee: str
    kind: TaskKind
    cells: list[TaskCell]
    job: str
    evidence: dict[str, dict] = field(default_factory=dict)
    closed: bool = False

    def cell_refs(self) -> list[CellRef]:
        return [tc.cell for tc in self.cells]

    def to_doc(self) -> dict:
        return {
            "v": DOC_VERSION,
            "id": self.id,
            "assignee": self.assignee,
            "kind": self.kind.value,
            "job": self.job,
            "cells": [tc.to_doc() for tc in self.cells],
            "evidence": {k: dict(v) for k, v in self.evidence.items()},
            "closed": self.closed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PendingTask":
        return cls(
            id=doc["id"], assignee=doc["assignee"], kind=TaskKind(doc["kind"]),
            cells=[TaskCell.from_doc(c) for c in doc["cells"]],
            job=doc["job"],
            evidence={k: dict(v) for k, v in doc.get("evidence", {}).items()},
            closed=bool(doc.get("closed", False)),
        )

"""Black-box cleaning agents.

Ships the three built-ins: an FD-violation detector, an FD repairer (majority
value per left-hand-side group, lexicographic tie-break), and a scripted
human simulator.  The scripted machinery doubles as a noisy automatic agent
for simulations, since the deterministic FD repairer has no error knob.

All agent behavior is a pure function of its inputs plus a named seed; the
per-cell randomness is derived by hashing, never from ambient RNG state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ConfigError, RuleParseError
from .model import (
    AgentDescriptor,
    CellRef,
    CellSelector,
    PendingTask,
    RelationInstance,
    TaskKind,
    resolve_selector,
)

PERTURB_MARKER = "~"

VERDICT_ACCURATE = "accurate"
VERDICT_INACCURATE = "inaccurate"


def _unit(seed, *parts: str) -> float:
    """Deterministic uniform draw in [0, 1) from a seed and string parts."""
    text = ":".join([str(seed), *parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


@dataclass(frozen=True)
class FDRule:
    """Functional dependency lhs -> rhs over one relation."""

    id: str
    relation: str
    lhs: tuple[str, ...]
    rhs: tuple[str, ...]

    def __post_init__(self):
        if not self.lhs or not self.rhs:
            raise RuleParseError(f"rule {self.id!r}: lhs and rhs must be non-empty")
        if set(self.lhs) & set(self.rhs):
            raise RuleParseError(f"rule {self.id!r}: lhs and rhs must be disjoint")

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.lhs + self.rhs


def parse_rules(text: str) -> dict[str, FDRule]:
    """Parse the rules file: one `id: relation: lhs-attrs -> rhs-attrs` per line."""
    rules: dict[str, FDRule] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, deps = line.partition("->")
        if not sep:
            raise RuleParseError(f"line {lineno}: missing '->' in rule {line!r}")
        parts = [p.strip() for p in head.split(":")]
        if len(parts) != 3:
            raise RuleParseError(f"line {lineno}: expected 'id: relation: lhs -> rhs'")
        rule_id, relation, lhs_text = parts
        lhs = tuple(a.strip() for a in lhs_text.split(",") if a.strip())
        rhs = tuple(a.strip() for a in deps.split(",") if a.strip())
        if not rule_id or not relation:
            raise RuleParseError(f"line {lineno}: empty rule id or relation")
        if rule_id in rules:
            raise RuleParseError(f"line {lineno}: duplicate rule id {rule_id!r}")
        rules[rule_id] = FDRule(rule_id, relation, lhs, rhs)
    return rules


@dataclass
class DetectionReport:
    """Suspect cells a detector flagged, with per-suspect evidence."""

    detector: str
    suspects: list[CellRef]
    evidence: dict[str, dict] = field(default_factory=dict)

    def rules_for(self, cell: CellRef) -> list[str]:
        return list(self.evidence.get(cell.key(), {}).get("rules", ()))


@dataclass
class RepairGroup:
    """One violating group a repairer processed: every suspect cell in it gets provenance."""

    rule: str | None
    cells: list[CellRef]
    updates: list[tuple[CellRef, str]]


@dataclass
class RepairProposal:
    repairer: str
    updates: list[tuple[CellRef, str]]
    resources_used: list[str] = field(default_factory=list)
    groups: list[RepairGroup] = field(default_factory=list)


def _check_rule_attrs(instance: RelationInstance, rule: FDRule) -> None:
    if rule.relation != instance.name:
        raise ConfigError(f"rule {rule.id!r} targets relation {rule.relation!r}, got {instance.name!r}")
    missing = [a for a in rule.attributes if a not in instance.attributes]
    if missing:
        raise ConfigError(f"rule {rule.id!r} references missing attribute(s) {missing}")


def _violating_groups(instance: RelationInstance, rule: FDRule) -> list[list[str]]:
    """Row-id groups that agree on lhs but carry more than one distinct rhs tuple."""
    groups: dict[tuple, list[str]] = {}
    for rid in instance.row_ids:
        key = tuple(instance.value(rid, a) for a in rule.lhs)
        groups.setdefault(key, []).append(rid)
    out = []
    for key in sorted(groups):
        rows = groups[key]
        if len(rows) < 2:
            continue
        rhs_values = {tuple(instance.value(r, a) for a in rule.rhs) for r in rows}
        if len(rhs_values) > 1:
            out.append(rows)
    return out


def detect_fd_violations(instance: RelationInstance, rule: FDRule,
                         scope: Iterable[CellRef] | None = None) -> DetectionReport:
    """Flag the lhs and rhs cells of every tuple pair that agrees on lhs but differs on rhs.

    A row pair violates the rule exactly when it shares the lhs values and
    disagrees on the rhs tuple, so the suspects are all lhs+rhs cells of rows
    in any lhs-group holding more than one distinct rhs value.  Suspects are
    intersected with scope; evidence names the rule and the partner cells.
    """
    _check_rule_attrs(instance, rule)
    scope_set = None if scope is None else {c for c in scope}
    suspects: list[CellRef] = []
    evidence: dict[str, dict] = {}
    for rows in _violating_groups(instance, rule):
        for rid in rows:
            own_rhs = tuple(instance.value(rid, a) for a in rule.rhs)
            partners = [
                CellRef(instance.name, other, a)
                for other in rows
                if other != rid and tuple(instance.value(other, a) for a in rule.rhs) != own_rhs
                for a in rule.attributes
            ]
            for attr in rule.attributes:
                cell = CellRef(instance.name, rid, attr)
                if scope_set is not None and cell not in scope_set:
                    continue
                suspects.append(cell)
                evidence[cell.key()] = {
                    "rules": [rule.id],
                    "partners": [p.key() for p in partners],
                }
    suspects.sort(key=lambda c: (instance.row_pos(c.row_id), instance.attr_pos(c.attribute)))
    return DetectionReport(detector=rule.id, suspects=suspects, evidence=evidence)


def repair_fd_violations(instance: RelationInstance, rule: FDRule,
                         report: DetectionReport) -> RepairProposal:
    """Propose the most frequent rhs value per violating lhs-group, ties to the smallest.

    Every rhs cell of each violating group appears in the updates, including
    rows already holding the majority value; the orchestrator records those as
    confirmations so provenance covers the whole group.
    """
    _check_rule_attrs(instance, rule)
    if report.suspects and not any(rule.id in report.rules_for(c) for c in report.suspects):
        raise ConfigError(f"report was not produced for rule {rule.id!r}")
    suspect_rows = {c.row_id for c in report.suspects if c.relation == instance.name}
    updates: list[tuple[CellRef, str]] = []
    groups: list[RepairGroup] = []
    for rows in _violating_groups(instance, rule):
        if not suspect_rows & set(rows):
            continue
        group_updates: list[tuple[CellRef, str]] = []
        for attr in rule.rhs:
            counts: dict[str, int] = {}
            for rid in rows:
                v = instance.value(rid, attr)
                counts[v] = counts.get(v, 0) + 1
            best = max(counts.values())
            majority = min(v for v, n in counts.items() if n == best)
            for rid in rows:
                group_updates.append((CellRef(instance.name, rid, attr), majority))
        group_cells = [CellRef(instance.name, rid, a) for rid in rows for a in rule.attributes]
        groups.append(RepairGroup(rule=rule.id, cells=group_cells, updates=group_updates))
        updates.extend(group_updates)
    return RepairProposal(repairer="", updates=updates,
                          resources_used=[rule.id] if groups else [], groups=groups)


@dataclass(frozen=True)
class HumanScript:
    """Simulated human: answers from ground truth, errs at a seeded rate, abstains outside coverage."""

    human: str
    ground_truth: Mapping[CellRef, str]
    error_rate: float = 0.0
    coverage: CellSelector = CellSelector(("*",))
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ConfigError(f"script for {self.human!r}: error_rate must be in [0,1]")


@dataclass
class ScriptedResponse:
    """What a scripted human sends back through the gateway for one task."""

    kind: str  # "report" | "repair" | "verdict"
    suspects: list[CellRef] = field(default_factory=list)
    values: dict[CellRef, str] = field(default_factory=dict)
    verdicts: dict[CellRef, str] = field(default_factory=dict)
    abstained: list[CellRef] = field(default_factory=list)

    def to_doc(self) -> dict:
        doc: dict = {"v": 1, "kind": self.kind, "abstain": [c.key() for c in self.abstained]}
        if self.kind == "report":
            doc["suspects"] = [c.key() for c in self.suspects]
        elif self.kind == "repair":
            doc["values"] = {c.key(): v for c, v in self.values.items()}
        else:
            doc["verdicts"] = {c.key(): v for c, v in self.verdicts.items()}
        return doc


_TASK_RESPONSE_KIND = {
    TaskKind.DETECT: "report",
    TaskKind.REPAIR: "repair",
    TaskKind.VALIDATE: "verdict",
}


def run_scripted_human(task: PendingTask, script: HumanScript,
                       relations: Mapping[str, RelationInstance]) -> ScriptedResponse:
    """Produce the scripted response for one pending task.

    Per covered cell the script errs with probability error_rate: a wrong
    detect answer flips suspect/clean, a wrong repair appends the marker
    character to the true value, a wrong verdict is the flipped verdict.
    Cells outside coverage (or missing from ground truth) become abstentions.
    """
    covered = set(resolve_selector(script.coverage, relations))
    response = ScriptedResponse(kind=_TASK_RESPONSE_KIND[task.kind])
    for tc in task.cells:
        cell = tc.cell
        if cell not in covered or cell not in script.ground_truth:
            response.abstained.append(cell)
            continue
        truth = script.ground_truth[cell]
        err = _unit(script.seed, task.id, task.kind.value, cell.key()) < script.error_rate
        if task.kind == TaskKind.DETECT:
            is_dirty = tc.value != truth
            flag = (not is_dirty) if err else is_dirty
            if flag:
                response.suspects.append(cell)
        elif task.kind == TaskKind.REPAIR:
            response.values[cell] = truth + PERTURB_MARKER if err else truth
        else:
            accurate = tc.value == truth
            if err:
                accurate = not accurate
            response.verdicts[cell] = VERDICT_ACCURATE if accurate else VERDICT_INACCURATE
    return response


def load_scripts(doc: dict, *, truth_loader=None) -> dict[str, HumanScript]:
    """Build HumanScripts from the scripts document.

    ground_truth may be an inline {"Rel/row/Attr": value} map or a file
    reference resolved through truth_loader(path) -> Mapping[CellRef, str].
    """
    if not isinstance(doc, dict) or "scripts" not in doc:
        raise ConfigError("scripts document must be an object with a 'scripts' map")
    out: dict[str, HumanScript] = {}
    for human, spec in doc["scripts"].items():
        raw_truth = spec.get("ground_truth", {})
        if isinstance(raw_truth, str):
            if truth_loader is None:
                raise ConfigError(f"script for {human!r} references a truth file but no loader given")
            truth = dict(truth_loader(raw_truth))
        else:
            truth = {CellRef.parse(k): str(v) for k, v in raw_truth.items()}
        coverage = spec.get("coverage", ["*"])
        if isinstance(coverage, str):
            coverage = [coverage]
        out[human] = HumanScript(
            human=human,
            ground_truth=truth,
            error_rate=float(spec.get("error_rate", 0.0)),
            coverage=CellSelector.parse(coverage),
            seed=int(spec.get("seed", 0)),
        )
    return out


class FDDetectorAgent:
    """Automatic detector backed by one or more FD rules."""

    def __init__(self, agent_id: str, rules: list[FDRule]):
        self.id = agent_id
        self.kind = "detector"
        self.rules = sorted(rules, key=lambda r: r.id)

    def capability(self, relations: Mapping[str, RelationInstance]) -> set[CellRef] | None:
        return _rule_cells(self.rules, relations)

    def detect(self, relations: Mapping[str, RelationInstance],
               cells: Iterable[CellRef]) -> list[DetectionReport]:
        cells = list(cells)
        reports = []
        for rule in self.rules:
            instance = relations.get(rule.relation)
            if instance is None:
                continue
            scope = [c for c in cells if c.relation == rule.relation]
            report = detect_fd_violations(instance, rule, scope)
            report.detector = self.id
            reports.append(report)
        return reports


class FDRepairAgent:
    """Automatic repairer applying the majority policy per rule; re-detects internally."""

    def __init__(self, agent_id: str, rules: list[FDRule]):
        self.id = agent_id
        self.kind = "repairer"
        self.rules = sorted(rules, key=lambda r: r.id)

    def capability(self, relations: Mapping[str, RelationInstance]) -> set[CellRef] | None:
        return _rule_cells(self.rules, relations)

    def repair(self, relations: Mapping[str, RelationInstance],
               cells: Iterable[CellRef]) -> RepairProposal:
        cells = list(cells)
        merged = RepairProposal(repairer=self.id, updates=[], resources_used=[], groups=[])
        for rule in self.rules:
            instance = relations.get(rule.relation)
            if instance is None:
                continue
            scope = [c for c in cells if c.relation == rule.relation]
            if not scope:
                continue
            report = detect_fd_violations(instance, rule, scope)
            if not report.suspects:
                continue
            proposal = repair_fd_violations(instance, rule, report)
            merged.updates.extend(proposal.updates)
            merged.groups.extend(proposal.groups)
            for res in proposal.resources_used:
                if res not in merged.resources_used:
                    merged.resources_used.append(res)
        return merged


class ScriptedRepairAgent:
    """Automatic repairer with a tunable error rate, used by simulations."""

    def __init__(self, agent_id: str, script: HumanScript):
        self.id = agent_id
        self.kind = "repairer"
        self.script = script

    def capability(self, relations: Mapping[str, RelationInstance]) -> set[CellRef] | None:
        return set(resolve_selector(self.script.coverage, relations))

    def repair(self, relations: Mapping[str, RelationInstance],
               cells: Iterable[CellRef]) -> RepairProposal:
        updates: list[tuple[CellRef, str]] = []
        for cell in cells:
            truth = self.script.ground_truth.get(cell)
            if truth is None:
                continue
            err = _unit(self.script.seed, self.id, "repair", cell.key()) < self.script.error_rate
            updates.append((cell, truth + PERTURB_MARKER if err else truth))
        group = RepairGroup(rule=None, cells=[c for c, _ in updates], updates=updates)
        return RepairProposal(repairer=self.id, updates=updates,
                              resources_used=[], groups=[group] if updates else [])


def _rule_cells(rules: list[FDRule],
                relations: Mapping[str, RelationInstance]) -> set[CellRef]:
    out: set[CellRef] = set()
    for rule in rules:
        instance = relations.get(rule.relation)
        if instance is None:
            continue
        for attr in rule.attributes:
            if attr not in instance.attributes:
                continue
            out.update(CellRef(rule.relation, rid, attr) for rid in instance.row_ids)
    return out


def build_agent(desc: AgentDescriptor, rules: Mapping[str, FDRule],
                script: HumanScript | None = None):
    """Instantiate the runtime agent for a registry descriptor."""
    if script is not None:
        if desc.kind != "repairer":
            raise ConfigError(f"agent {desc.id!r}: scripted automatic agents must be repairers")
        return ScriptedRepairAgent(desc.id, script)
    rule_objs = []
    for rid in desc.resources:
        if rid not in rules:
            raise ConfigError(f"agent {desc.id!r} references unknown rule {rid!r}")
        rule_objs.append(rules[rid])
    if desc.kind == "detector":
        return FDDetectorAgent(desc.id, rule_objs)
    if desc.kind == "repairer":
        return FDRepairAgent(desc.id, rule_objs)
    raise ConfigError(f"agent {desc.id!r}: unknown kind {desc.kind!r}")


def load_truth_csv(text: str) -> dict[CellRef, str]:
    """Parse a ground-truth map file: CSV with columns relation,row_id,attribute,value."""
    import csv
    import io

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["relation", "row_id", "attribute", "value"]:
        raise ConfigError("truth file must have header relation,row_id,attribute,value")
    out: dict[CellRef, str] = {}
    for row in reader:
        if len(row) != 4:
            raise ConfigError(f"truth file row has {len(row)} columns, expected 4")
        out[CellRef(row[0], row[1], row[2])] = row[3]
    return out

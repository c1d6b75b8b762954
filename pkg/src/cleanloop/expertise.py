"""Human profiles and the validation-history ledger behind expertise scores.

Expertise over a cell set and task kind is the ratio of correct outcomes to
validated outcomes.  The raw ratio is undefined on an empty history, so
allocation uses the smoothed variant with a Beta(1,1) prior by default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConfigError, UndefinedExpertiseError
from .model import CellRef, CellSelector, Role, TaskKind, DOC_VERSION

OUTCOME_CORRECT = "correct"
OUTCOME_INCORRECT = "incorrect"

DEFAULT_PRIOR = (1.0, 1.0)


@dataclass(frozen=True)
class HumanProfile:
    """One pool member: role, knowledgeable cells, and unit cost per task."""

    id: str
    role: Role
    data: CellSelector
    cost: float = 1.0

    def __post_init__(self):
        if self.cost < 0:
            raise ConfigError(f"human {self.id!r}: cost must be non-negative")

    def to_doc(self) -> dict:
        return {"id": self.id, "role": self.role.value, "data": self.data.to_doc(), "cost": self.cost}

    @classmethod
    def from_doc(cls, doc: dict) -> "HumanProfile":
        try:
            role = Role(doc.get("role", ""))
        except ValueError:
            raise ConfigError(f"human {doc.get('id')!r}: unknown role {doc.get('role')!r}") from None
        data = doc.get("data", ["*"])
        if isinstance(data, str):
            data = [data]
        return cls(id=str(doc["id"]), role=role, data=CellSelector.parse(data),
                   cost=float(doc.get("cost", 1.0)))


@dataclass(frozen=True)
class HistoryEntry:
    human: str
    cell: CellRef
    task: TaskKind
    outcome: str
    sequence: int


class TaskHistory:
    """Append-only log of validated human outcomes."""

    def __init__(self):
        self.entries: list[HistoryEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record_outcome(self, human: str, cell: CellRef, task: TaskKind,
                       outcome: str, sequence: int | None = None) -> HistoryEntry:
        if outcome not in (OUTCOME_CORRECT, OUTCOME_INCORRECT):
            raise ConfigError(f"outcome must be correct/incorrect, got {outcome!r}")
        if sequence is None:
            sequence = self.entries[-1].sequence + 1 if self.entries else 1
        if self.entries and sequence <= self.entries[-1].sequence:
            raise ConfigError("history sequence must be strictly increasing")
        entry = HistoryEntry(human, cell, TaskKind(task), outcome, sequence)
        self.entries.append(entry)
        return entry

    def counts(self, human: str, cells: Iterable[CellRef] | None, task: TaskKind) -> tuple[int, int]:
        """(#correct, #validated) for entries matching human, cell set, and task kind.

        cells=None matches every cell.
        """
        cellset = None if cells is None else set(cells)
        correct = validated = 0
        for e in self.entries:
            if e.human != human or e.task != task:
                continue
            if cellset is not None and e.cell not in cellset:
                continue
            validated += 1
            if e.outcome == OUTCOME_CORRECT:
                correct += 1
        return correct, validated


def expertise_score(history: TaskHistory, human: str,
                    cells: Iterable[CellRef] | None, task: TaskKind) -> float:
    """Exact expertise: #correct / #validated over the matching history entries."""
    correct, validated = history.counts(human, cells, task)
    if validated == 0:
        raise UndefinedExpertiseError(
            f"no validated {TaskKind(task).value} outcomes for {human!r} on the given cells")
    return correct / validated


def smoothed_expertise(history: TaskHistory, human: str,
                       cells: Iterable[CellRef] | None, task: TaskKind,
                       prior: tuple[float, float] = DEFAULT_PRIOR) -> float:
    """(#correct + a) / (#validated + a + b); defined everywhere, converges to the exact ratio."""
    alpha, beta = prior
    if alpha <= 0 or beta <= 0:
        raise ConfigError("smoothing prior must be positive")
    correct, validated = history.counts(human, cells, task)
    return (correct + alpha) / (validated + alpha + beta)


def load_human_pool(text: str) -> dict[str, HumanProfile]:
    """Parse the human-pool file: {"v": 1, "humans": [profile, ...]}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"human pool file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "humans" not in doc:
        raise ConfigError("human pool file must be an object with a 'humans' list")
    if doc.get("v", DOC_VERSION) != DOC_VERSION:
        raise ConfigError(f"unsupported human pool document version {doc.get('v')!r}")
    out: dict[str, HumanProfile] = {}
    for item in doc["humans"]:
        profile = HumanProfile.from_doc(item)
        if profile.id in out:
            raise ConfigError(f"duplicate human id {profile.id!r}")
        out[profile.id] = profile
    return out

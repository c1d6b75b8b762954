"""Repair provenance: factors(c), factor quality, and validation-target selection.

Every repaired cell carries the set of factors behind its value: the
detectors that flagged it, the repairer that wrote it, the rules the repairer
consumed, and later the validators who judged it.  Verdicts reward or
penalize every factor of the cell at once; quality is the running ratio of
accurate verdicts.  Factor sets accumulate across a cell's repair
generations, so a cell touched by two rules in two iterations answers for
both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigError, LedgerConflictError, MissingEntryError
from .model import CellRef

FACTOR_DETECTOR = "detector"
FACTOR_REPAIRER = "repairer"
FACTOR_RESOURCE = "resource"
FACTOR_VALIDATOR = "validator"

VERDICT_ACCURATE = "accurate"

STATUS_SCORED = "scored"
STATUS_UNTESTED = "untested"

AGGREGATE_COVERAGE = "AggregateCoverage"
ISOLATE_FACTORS = "IsolateFactors"


@dataclass
class FactorLedgerEntry:
    """factors(c) for one (cell, repair generation)."""

    cell: CellRef
    generation: int
    factors: dict[str, str]  # factor id -> factor type


@dataclass
class FactorStats:
    factor: str
    type: str
    correct: int = 0
    validated: int = 0


@dataclass(frozen=True)
class ValidationStrategy:
    variant: str  # AGGREGATE_COVERAGE | ISOLATE_FACTORS
    cell_budget: int

    def __post_init__(self):
        if self.variant not in (AGGREGATE_COVERAGE, ISOLATE_FACTORS):
            raise ConfigError(f"unknown validation strategy {self.variant!r}")
        if self.cell_budget < 1:
            raise ConfigError("cell_budget must be >= 1")


def factor_quality(stats: FactorStats) -> float | None:
    """Quality(f) = #correct / #validated; None while untested (validated = 0)."""
    if stats.validated == 0:
        return None
    return stats.correct / stats.validated


class FactorLedger:
    """All factor entries and stats for one session.  Single-writer discipline."""

    def __init__(self):
        self.entries: dict[tuple[str, int], FactorLedgerEntry] = {}
        self.generations: dict[str, list[int]] = {}
        self.stats: dict[str, FactorStats] = {}
        self.attr_order: dict[str, list[str]] = {}

    def set_attribute_order(self, relation: str, attributes: list[str]) -> None:
        self.attr_order[relation] = list(attributes)

    def _cell_key(self, cell: CellRef):
        attrs = self.attr_order.get(cell.relation, [])
        apos = attrs.index(cell.attribute) if cell.attribute in attrs else len(attrs)
        rid = cell.row_id
        rpos = (0, int(rid[1:])) if rid.startswith("r") and rid[1:].isdigit() else (1, 0)
        return (cell.relation, rpos, rid, apos, cell.attribute)

    def record_repair_factors(self, cell: CellRef, generation: int,
                              detectors: dict[str, str] | list[str] = (),
                              repairer: str | None = None,
                              resources: list[str] = ()) -> FactorLedgerEntry:
        """Store the factor set behind one repair event.

        `detectors` may be a list of agent ids (typed detector) or an explicit
        id -> type map for callers that distinguish human detectors.
        """
        key = (cell.key(), generation)
        if key in self.entries:
            raise LedgerConflictError(f"entry already exists for {cell.key()} generation {generation}")
        factors: dict[str, str] = {}
        if isinstance(detectors, dict):
            factors.update(detectors)
        else:
            factors.update({d: FACTOR_DETECTOR for d in detectors})
        for res in resources:
            factors[res] = FACTOR_RESOURCE
        if repairer:
            factors[repairer] = FACTOR_REPAIRER
        if not factors:
            raise MissingEntryError(f"repair of {cell.key()} has no contributing factors")
        entry = FactorLedgerEntry(cell=cell, generation=generation, factors=factors)
        self.entries[key] = entry
        self.generations.setdefault(cell.key(), []).append(generation)
        self.generations[cell.key()].sort()
        for fid, ftype in factors.items():
            self.stats.setdefault(fid, FactorStats(factor=fid, type=ftype))
        return entry

    def latest_generation(self, cell: CellRef) -> int | None:
        gens = self.generations.get(cell.key())
        return gens[-1] if gens else None

    def accumulated_factors(self, cell: CellRef, generation: int | None = None) -> dict[str, str]:
        """Union of the cell's factor sets over all generations up to `generation`."""
        gens = self.generations.get(cell.key(), [])
        out: dict[str, str] = {}
        for g in gens:
            if generation is not None and g > generation:
                break
            out.update(self.entries[(cell.key(), g)].factors)
        return out

    def apply_validation(self, cell: CellRef, generation: int, verdict: str,
                         validator: str) -> list[FactorStats]:
        """Reward (accurate) or penalize every accumulated factor; record the validator.

        The validator is appended to the latest entry's factors afterwards, so
        a later contradiction penalizes earlier validators too.
        """
        if (cell.key(), generation) not in self.entries:
            raise MissingEntryError(f"no ledger entry for {cell.key()} generation {generation}")
        factors = self.accumulated_factors(cell, generation)
        touched: list[FactorStats] = []
        for fid, ftype in sorted(factors.items()):
            stats = self.stats.setdefault(fid, FactorStats(factor=fid, type=ftype))
            stats.validated += 1
            if verdict == VERDICT_ACCURATE:
                stats.correct += 1
            touched.append(stats)
        entry = self.entries[(cell.key(), generation)]
        entry.factors.setdefault(validator, FACTOR_VALIDATOR)
        self.stats.setdefault(validator, FactorStats(factor=validator, type=FACTOR_VALIDATOR))
        return touched

    def cells(self) -> list[CellRef]:
        seen: dict[str, CellRef] = {}
        for entry in self.entries.values():
            seen[entry.cell.key()] = entry.cell
        return sorted(seen.values(), key=self._cell_key)

    def select_validation_targets(self, strategy: ValidationStrategy,
                                  suspects: set[str] | None = None,
                                  candidates: Iterable[CellRef] | None = None) -> list[CellRef]:
        """Choose which repaired cells to hand to validators.

        AggregateCoverage greedily picks cells covering the most not-yet-covered
        factors (broad feedback per cell).  IsolateFactors prefers cells with
        the smallest accumulated factor sets, suspect-intersecting cells first
        when suspects are given (fine-grained blame).  Ties break by canonical
        cell order.  A budget beyond the ledger size returns every cell.
        `candidates` restricts the pool to a subset of ledgered cells, e.g. the
        cells one job actually repaired.
        """
        cells = self.cells()
        if candidates is not None:
            allowed = {c.key() for c in candidates}
            cells = [c for c in cells if c.key() in allowed]
        if not cells:
            return []
        budget = min(strategy.cell_budget, len(cells))
        factor_sets = {c.key(): set(self.accumulated_factors(c)) for c in cells}
        if strategy.variant == AGGREGATE_COVERAGE:
            chosen: list[CellRef] = []
            covered: set[str] = set()
            remaining = list(cells)
            while remaining and len(chosen) < budget:
                remaining.sort(key=lambda c: (-len(factor_sets[c.key()] - covered), self._cell_key(c)))
                pick = remaining.pop(0)
                chosen.append(pick)
                covered |= factor_sets[pick.key()]
            return chosen
        if suspects:
            def key(c: CellRef):
                hits = factor_sets[c.key()] & suspects
                return (0 if hits else 1, len(factor_sets[c.key()]), self._cell_key(c))
        else:
            def key(c: CellRef):
                return (len(factor_sets[c.key()]), self._cell_key(c))
        return sorted(cells, key=key)[:budget]

    def report_rows(self) -> list[dict]:
        """Quality ranking: untested factors first (no verdict yet, so no rank),
        then scored factors from best to worst.  The bottom row is the prime
        bottleneck suspect."""
        rows = []
        for stats in self.stats.values():
            quality = factor_quality(stats)
            rows.append({
                "factor": stats.factor,
                "type": stats.type,
                "correct": stats.correct,
                "validated": stats.validated,
                "quality": quality,
                "status": STATUS_UNTESTED if quality is None else STATUS_SCORED,
            })
        rows.sort(key=lambda r: (
            0 if r["quality"] is None else 1,
            -(r["quality"] if r["quality"] is not None else 0.0),
            r["factor"],
        ))
        return rows


def render_factor_table(rows: list[dict]) -> str:
    """Fixed-width text table for the CLI bottleneck report."""
    header = ("factor", "type", "correct", "validated", "quality")
    widths = [len(h) for h in header]
    body = []
    for r in rows:
        quality = "untested" if r["quality"] is None else f"{r['quality']:.3f}"
        line = (r["factor"], r["type"], str(r["correct"]), str(r["validated"]), quality)
        body.append(line)
        widths = [max(w, len(v)) for w, v in zip(widths, line)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header)]
    out.extend(fmt.format(*line) for line in body)
    return "\n".join(out)

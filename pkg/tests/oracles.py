"""Independent reference implementations used to check the engine.

Everything here is deliberately naive: brute force over row pairs, exhaustive
subset enumeration, plain folds over raw audit event dicts.  None of it shares
code with the package under test beyond the core value types.
"""

from __future__ import annotations

import random
from collections import Counter
from itertools import combinations

from cleanloop.model import Budget, BUDGET_MAX_COST, BUDGET_MAX_HUMANS, CellRef
from cleanloop.agents import FDRule
from cleanloop.model import RelationInstance


def all_pairs_fd_suspects(instance: RelationInstance, rule: FDRule) -> set[CellRef]:
    """Every lhs+rhs cell of every row pair that agrees on lhs and differs on rhs."""
    suspects: set[CellRef] = set()
    ids = instance.row_ids
    for a, b in combinations(ids, 2):
        lhs_a = [instance.value(a, attr) for attr in rule.lhs]
        lhs_b = [instance.value(b, attr) for attr in rule.lhs]
        if lhs_a != lhs_b:
            continue
        rhs_a = [instance.value(a, attr) for attr in rule.rhs]
        rhs_b = [instance.value(b, attr) for attr in rule.rhs]
        if rhs_a == rhs_b:
            continue
        for rid in (a, b):
            for attr in (*rule.lhs, *rule.rhs):
                suspects.add(CellRef(instance.name, rid, attr))
    return suspects


def majority_repairs(instance: RelationInstance, rule: FDRule) -> dict[CellRef, str]:
    """Expected value of every rhs cell in a violating group: most frequent value,
    ties to the lexicographically smallest."""
    groups: dict[tuple, list[str]] = {}
    for rid in instance.row_ids:
        key = tuple(instance.value(rid, a) for a in rule.lhs)
        groups.setdefault(key, []).append(rid)
    out: dict[CellRef, str] = {}
    for rows in groups.values():
        if len(rows) < 2:
            continue
        rhs_tuples = {tuple(instance.value(r, a) for a in rule.rhs) for r in rows}
        if len(rhs_tuples) < 2:
            continue
        for attr in rule.rhs:
            counts = Counter(instance.value(r, attr) for r in rows)
            top = max(counts.values())
            winner = min(v for v, n in counts.items() if n == top)
            for rid in rows:
                out[CellRef(instance.name, rid, attr)] = winner
    return out


def random_fd_instance(rng: random.Random, max_rows: int = 50) -> tuple[RelationInstance, FDRule]:
    """Small random relation plus an FD over it, with enough value collisions
    to make violations likely."""
    n_rows = rng.randint(2, max_rows)
    n_attrs = rng.randint(2, 5)
    attrs = [f"A{i}" for i in range(n_attrs)]
    cardinality = rng.randint(2, 6)
    rows = [[str(rng.randint(0, cardinality)) for _ in attrs] for _ in range(n_rows)]
    instance = RelationInstance("T", attrs, rows)
    k = rng.randint(1, n_attrs - 1)
    shuffled = attrs[:]
    rng.shuffle(shuffled)
    lhs = tuple(sorted(shuffled[:k]))
    rhs = tuple(sorted(shuffled[k:]))
    return instance, FDRule("f", "T", lhs, rhs)


def cover_feasible(budget: Budget | None, subset: tuple[str, ...],
                   costs: dict[str, float]) -> bool:
    if budget is None:
        return True
    if budget.kind == BUDGET_MAX_HUMANS:
        return len(subset) <= budget.value
    return sum(costs[h] for h in subset) <= budget.value + 1e-9


def cheapest_cover(cells: set[CellRef], coverable: dict[str, set[CellRef]],
                   costs: dict[str, float], budget: Budget | None) -> tuple[float, tuple[str, ...]] | None:
    """Exhaustive minimum-cost full cover within budget, or None when infeasible."""
    ids = sorted(coverable)
    best: tuple[float, tuple[str, ...]] | None = None
    for size in range(1, len(ids) + 1):
        for subset in combinations(ids, size):
            if not cover_feasible(budget, subset, costs):
                continue
            union: set[CellRef] = set()
            for h in subset:
                union |= coverable[h]
            if not union >= cells:
                continue
            cost = sum(costs[h] for h in subset)
            if best is None or cost < best[0] - 1e-9:
                best = (cost, subset)
    return best


def random_allocation_instance(rng: random.Random):
    """Pool of <= 8 humans over <= 12 cells with a random budget (sometimes none)."""
    n_cells = rng.randint(1, 12)
    cells = {CellRef("T", f"r{i + 1}", "A") for i in range(n_cells)}
    n_humans = rng.randint(1, 8)
    coverable: dict[str, set[CellRef]] = {}
    costs: dict[str, float] = {}
    for i in range(n_humans):
        hid = f"h{i + 1}"
        size = rng.randint(1, n_cells)
        coverable[hid] = set(rng.sample(sorted(cells, key=lambda c: c.key()), size))
        costs[hid] = rng.choice([0.5, 1.0, 1.0, 2.0, 3.0])
    kind = rng.choice([None, BUDGET_MAX_HUMANS, BUDGET_MAX_COST])
    if kind is None:
        budget = None
    elif kind == BUDGET_MAX_HUMANS:
        budget = Budget(kind, rng.randint(1, n_humans))
    else:
        budget = Budget(kind, rng.choice([1.0, 2.0, 3.0, 5.0, 8.0]))
    return cells, coverable, costs, budget


def recount_factor_counts(events: list[dict]) -> dict[str, tuple[int, int]]:
    """Fold the raw audit log into (#correct, #validated) per factor id.

    Mirrors the scoring contract only: a repair event opens generation g =
    (number of repairs on that cell so far) with factor set detectors +
    resources + producer; a verdict on generation g rewards or penalizes the
    union of the cell's factor sets at generations <= g, validators judged
    earlier included; the judging validator joins the generation-g set after.
    """
    repair_counts: dict[str, int] = {}
    entry_factors: dict[tuple[str, int], dict[str, str]] = {}
    counts: dict[str, tuple[int, int]] = {}
    for event in events:
        kind = event.get("kind")
        if kind == "repair":
            cell = event["cell"]
            gen = repair_counts.get(cell, 0) + 1
            repair_counts[cell] = gen
            factors = {d: "detector" for d in event.get("detectors", ())}
            for res in event.get("resources", ()):
                factors[res] = "resource"
            factors[event["producer"]] = "repairer"
            entry_factors[(cell, gen)] = factors
            for fid in factors:
                counts.setdefault(fid, (0, 0))
        elif kind == "verdict":
            cell = event["cell"]
            gen = event["generation"]
            if gen == 0 or (cell, gen) not in entry_factors:
                continue
            accumulated: dict[str, str] = {}
            for g in range(1, gen + 1):
                accumulated.update(entry_factors.get((cell, g), {}))
            accurate = event["verdict"] == "accurate"
            for fid in accumulated:
                correct, validated = counts.setdefault(fid, (0, 0))
                counts[fid] = (correct + (1 if accurate else 0), validated + 1)
            entry_factors[(cell, gen)].setdefault(event["validator"], "validator")
            counts.setdefault(event["validator"], (0, 0))
    return counts


_FACTOR_KIND = {"detector": "Detect", "repairer": "Repair", "validator": "Validate"}


def recount_expertise(events: list[dict], humans: set[str]) -> dict[tuple[str, str], tuple[int, int]]:
    """Fold the audit log into (#correct, #validated) per (human, task kind).

    A verdict credits every human factor of the judged cell under the task
    kind its factor type implies; resources score no expertise.  The judging
    validator is not part of their own verdict's factor set.
    """
    repair_counts: dict[str, int] = {}
    entry_factors: dict[tuple[str, int], dict[str, str]] = {}
    counts: dict[tuple[str, str], tuple[int, int]] = {}
    for event in events:
        kind = event.get("kind")
        if kind == "repair":
            cell = event["cell"]
            gen = repair_counts.get(cell, 0) + 1
            repair_counts[cell] = gen
            factors = {d: "detector" for d in event.get("detectors", ())}
            for res in event.get("resources", ()):
                factors[res] = "resource"
            factors[event["producer"]] = "repairer"
            entry_factors[(cell, gen)] = factors
        elif kind == "verdict":
            cell = event["cell"]
            gen = event["generation"]
            if gen == 0 or (cell, gen) not in entry_factors:
                continue
            accumulated: dict[str, str] = {}
            for g in range(1, gen + 1):
                accumulated.update(entry_factors.get((cell, g), {}))
            accurate = event["verdict"] == "accurate"
            for fid, ftype in accumulated.items():
                if fid not in humans or ftype not in _FACTOR_KIND:
                    continue
                key = (fid, _FACTOR_KIND[ftype])
                correct, validated = counts.setdefault(key, (0, 0))
                counts[key] = (correct + (1 if accurate else 0), validated + 1)
            entry_factors[(cell, gen)].setdefault(event["validator"], "validator")
    return counts

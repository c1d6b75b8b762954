"""Budgeted human-task allocation and interaction routing.

Allocation is budgeted weighted set cover: every requested cell must be
covered by someone knowledgeable, preferring high expertise per unit cost,
without exceeding the budget.  `assign_tasks` is greedy with backtracking:
it follows the pure greedy path, backtracks only when that path strands
uncovered cells inside a still-feasible instance (so a full cover is found
whenever one exists), and finishes with a bounded swap sweep that cheapens
the cover.  `brute_force_assignment` is the exact oracle for small pools.

`route_interaction` encodes the four human-to-human interaction edges:
error reports and specifications flow to the Data Curator, specification
error reports to the Domain Expert, performed fixes to the Data Validator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .errors import InfeasibleAssignmentError, OracleSizeError, RoutingError
from .expertise import HumanProfile, TaskHistory, smoothed_expertise
from .model import Budget, BUDGET_MAX_COST, BUDGET_MAX_HUMANS, CellRef, Role, TaskKind

_COST_EPS = 1e-9


@dataclass
class PoolMember:
    profile: HumanProfile
    coverable: set[CellRef]


@dataclass
class AssignmentProblem:
    cells: list[CellRef]
    pool: list[PoolMember]
    task: TaskKind
    budget: Budget | None = None


@dataclass
class Assignment:
    assigned: dict[str, list[CellRef]]
    total_cost: float
    min_expertise: float

    def humans(self) -> list[str]:
        return sorted(self.assigned)


ROUTING_EDGES = {
    "error-report": Role.DATA_CURATOR,
    "specification": Role.DATA_CURATOR,
    "specification-error-report": Role.DOMAIN_EXPERT,
    "fix-performed": Role.DATA_VALIDATOR,
}


def route_interaction(event: str) -> Role:
    """Map an interaction event kind to the role that receives it."""
    try:
        return ROUTING_EDGES[event]
    except KeyError:
        raise RoutingError(f"unknown interaction event kind {event!r}") from None


def _within_budget(budget: Budget | None, humans: int, cost: float) -> bool:
    if budget is None:
        return True
    if budget.kind == BUDGET_MAX_HUMANS:
        return humans <= budget.value
    return cost <= budget.value + _COST_EPS


def _check_coverable(problem: AssignmentProblem) -> dict[str, set[CellRef]]:
    cells = set(problem.cells)
    coverable = {m.profile.id: m.coverable & cells for m in problem.pool}
    missing = cells - set().union(*coverable.values()) if coverable else cells
    if missing:
        raise InfeasibleAssignmentError(
            f"no pool member covers cell(s) {sorted(c.key() for c in missing)}",
            uncoverable=missing)
    return coverable


def _finish(problem: AssignmentProblem, history: TaskHistory,
            chosen: list[str], coverable: dict[str, set[CellRef]],
            costs: dict[str, float]) -> Assignment:
    """Turn a chosen human set into per-cell assignments and summary numbers."""
    cells = set(problem.cells)
    per_human: dict[str, list[CellRef]] = {}
    for cell in sorted(cells):
        owners = [h for h in chosen if cell in coverable[h]]
        owners.sort(key=lambda h: (-round(smoothed_expertise(history, h, [cell], problem.task), 9), h))
        per_human.setdefault(owners[0], []).append(cell)
    assigned = {h: sorted(cs) for h, cs in per_human.items()}
    total_cost = sum(costs[h] for h in assigned)
    min_exp = min(
        (smoothed_expertise(history, h, cs, problem.task) for h, cs in assigned.items()),
        default=0.0)
    return Assignment(assigned=assigned, total_cost=total_cost, min_expertise=min_exp)


def _prune_redundant(chosen: list[str], cells: set[CellRef],
                     coverable: dict[str, set[CellRef]], costs: dict[str, float]) -> list[str]:
    """Drop any chosen human whose cells are already covered by the rest (costliest first)."""
    kept = list(chosen)
    for h in sorted(chosen, key=lambda h: (-costs[h], h)):
        others = [k for k in kept if k != h]
        if others and set().union(*(coverable[k] for k in others)) >= cells:
            kept = others
    return kept


def _improve_cover(chosen: list[str], cells: set[CellRef],
                   coverable: dict[str, set[CellRef]], costs: dict[str, float],
                   budget: Budget | None) -> list[str]:
    """Cheapen a full cover by swapping members: drop one or two chosen humans and
    re-cover with at most two others, keeping the result budget-feasible.  Greedy
    picks by marginal gain and can overshoot on cost; this sweep closes most of
    that gap on small pools without giving up the greedy's scalability."""

    def covers(subset: tuple[str, ...]) -> bool:
        union: set[CellRef] = set()
        for h in subset:
            union |= coverable[h]
        return union >= cells

    def total(subset: tuple[str, ...]) -> float:
        return sum(costs[h] for h in subset)

    current = tuple(sorted(chosen))
    for _ in range(len(coverable) * 2):
        others = sorted(set(coverable) - set(current))
        candidates: list[tuple[str, ...]] = []
        for drop_n in (1, 2):
            for drop in combinations(current, min(drop_n, len(current))):
                kept = tuple(h for h in current if h not in drop)
                if kept and covers(kept):
                    candidates.append(kept)
                    continue
                for add in others:
                    trial = kept + (add,)
                    if covers(trial):
                        candidates.append(trial)
                if drop_n == 1:
                    for pair in combinations(others, 2):
                        trial = kept + pair
                        if covers(trial):
                            candidates.append(trial)
        candidates = [c for c in candidates
                      if _within_budget(budget, len(c), total(c))]
        if not candidates:
            break
        best = min(candidates, key=lambda c: (total(c), len(c), c))
        if total(best) < total(current) - _COST_EPS:
            current = tuple(sorted(best))
        else:
            break
    return list(current)


def assign_tasks(problem: AssignmentProblem, history: TaskHistory) -> Assignment:
    """Greedy budgeted cover: best (new-cells x expertise)/cost first, backtracking on dead ends.

    Raises InfeasibleAssignmentError (carrying the uncoverable cells) when no
    budget-feasible full cover exists.
    """
    if not problem.pool:
        raise InfeasibleAssignmentError("pool is empty", uncoverable=set(problem.cells))
    coverable = _check_coverable(problem)
    costs = {m.profile.id: m.profile.cost for m in problem.pool}
    cells = set(problem.cells)

    def ranked(covered: set[CellRef], used: set[str]) -> list[str]:
        scored = []
        for hid, cov in coverable.items():
            if hid in used:
                continue
            gain_cells = cov - covered
            if not gain_cells:
                continue
            exp = smoothed_expertise(history, hid, gain_cells, problem.task)
            ratio = (len(gain_cells) * exp) / max(costs[hid], _COST_EPS)
            scored.append((-round(ratio, 9), hid))
        scored.sort()
        return [hid for _, hid in scored]

    best: list[str] | None = None

    def search(covered: set[CellRef], chosen: list[str], cost: float) -> list[str] | None:
        if covered >= cells:
            return list(chosen)
        for hid in ranked(covered, set(chosen)):
            n_humans = len(chosen) + 1
            n_cost = cost + costs[hid]
            if not _within_budget(problem.budget, n_humans, n_cost):
                continue
            found = search(covered | coverable[hid], chosen + [hid], n_cost)
            if found is not None:
                return found
        return None

    best = search(set(), [], 0.0)
    if best is None:
        uncovered = cells  # budget, not coverage, is the binding constraint here
        raise InfeasibleAssignmentError(
            "no budget-feasible full cover exists", uncoverable=uncovered)
    best = _prune_redundant(best, cells, coverable, costs)
    best = _improve_cover(best, cells, coverable, costs, problem.budget)
    return _finish(problem, history, best, coverable, costs)


def brute_force_assignment(problem: AssignmentProblem, history: TaskHistory) -> Assignment:
    """Exact oracle: enumerate every pool subset; maximize total expertise, then minimize cost.

    Total expertise of a cover is the sum over its per-cell assignment of each
    human's smoothed expertise on their assigned cells, weighted by cell count
    (the expected number of correct answers).  Guarded to pools of at most 12.
    """
    if len(problem.pool) > 12:
        raise OracleSizeError(f"oracle limited to 12 pool members, got {len(problem.pool)}")
    if not problem.pool:
        raise InfeasibleAssignmentError("pool is empty", uncoverable=set(problem.cells))
    coverable = _check_coverable(problem)
    costs = {m.profile.id: m.profile.cost for m in problem.pool}
    cells = set(problem.cells)
    ids = sorted(coverable)

    best_key = None
    best_subset: tuple[str, ...] | None = None
    for size in range(1, len(ids) + 1):
        for subset in combinations(ids, size):
            cost = sum(costs[h] for h in subset)
            if not _within_budget(problem.budget, len(subset), cost):
                continue
            union = set().union(*(coverable[h] for h in subset))
            if not union >= cells:
                continue
            candidate = _finish(problem, history, list(subset), coverable, costs)
            expertise = sum(
                round(smoothed_expertise(history, h, cs, problem.task), 9) * len(cs)
                for h, cs in candidate.assigned.items())
            key = (-round(expertise, 9), round(cost, 9), subset)
            if best_key is None or key < best_key:
                best_key = key
                best_subset = subset
    if best_subset is None:
        raise InfeasibleAssignmentError(
            "no budget-feasible full cover exists", uncoverable=cells)
    return _finish(problem, history, list(best_subset), coverable, costs)

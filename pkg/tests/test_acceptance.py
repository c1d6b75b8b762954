"""Acceptance gate: one test per shipped guarantee, each with its own time limit.

Every test prints a single `[acceptance] <criterion>: PASS` line (visible under
`pytest -s`) and fails loudly if the guarantee or its time budget is missed.
"""

from __future__ import annotations

import random
import time

from cleanloop.agents import detect_fd_violations, repair_fd_violations
from cleanloop.allocation import AssignmentProblem, assign_tasks, brute_force_assignment
from cleanloop.errors import InfeasibleAssignmentError
from cleanloop.expertise import TaskHistory, expertise_score
from cleanloop.gateway import add_job
from cleanloop.model import Budget, CellRef, TaskKind
from cleanloop.orchestrator import handle_response, list_open_tasks, run_job
from cleanloop.provenance import ISOLATE_FACTORS, ValidationStrategy
from cleanloop.simulate import compare_strategies
from cleanloop.store import Session

from oracles import (
    all_pairs_fd_suspects,
    cheapest_cover,
    cover_feasible,
    majority_repairs,
    random_allocation_instance,
    random_fd_instance,
    recount_expertise,
    recount_factor_counts,
)
from scenarios import (
    BRANCHES5_TRUTH,
    OVERLAP_KEYS,
    PAYROLL_TRUTH,
    SALARY_KEY,
    answer_validation_tasks,
    branches5_job,
    branches5_session,
    payroll_job,
    payroll_session,
    substitution_config,
)
from test_allocation import salary_pool_problem


def _criterion(name: str, limit: float, fn) -> None:
    start = time.monotonic()
    try:
        fn()
    except BaseException:
        print(f"[acceptance] {name}: FAIL", flush=True)
        raise
    elapsed = time.monotonic() - start
    assert elapsed < limit, f"{name} took {elapsed:.2f}s, limit {limit:g}s"
    print(f"[acceptance] {name}: PASS ({elapsed:.2f}s < {limit:g}s)", flush=True)


def test_exact_expertise_ratio():
    def check():
        history = TaskHistory()
        cells = [CellRef("T", f"r{i}", "A") for i in range(1, 5)]
        for cell, outcome in zip(cells, ["correct", "incorrect", "correct", "incorrect"]):
            history.record_outcome("Ann", cell, TaskKind.DETECT, outcome)
        assert expertise_score(history, "Ann", cells, TaskKind.DETECT) == 0.5

    _criterion("expertise is the exact correct/validated ratio (2 of 4 -> 0.5)", 1.0, check)


def test_salary_pool_budget_one_picks_the_full_coverer():
    def check():
        problem = salary_pool_problem(Budget("max-humans", 1))
        greedy = assign_tasks(problem, TaskHistory())
        exact = brute_force_assignment(problem, TaskHistory())
        assert greedy.humans() == ["Alice"]
        assert exact.humans() == ["Alice"]
        assert sorted(greedy.assigned["Alice"]) == sorted(problem.cells)

    _criterion("budget max-humans=1 assigns the one human covering all salary cells "
               "(greedy and exhaustive agree)", 1.0, check)


def test_allocation_matches_exhaustive_oracle_at_scale():
    def check():
        rng = random.Random(91519)
        instances = 800
        feasible = 0
        worst_ratio = 1.0
        for _ in range(instances):
            cells, coverable, costs, budget = random_allocation_instance(rng)
            pool_problem = _problem_from(cells, coverable, costs, budget)
            oracle = cheapest_cover(cells, coverable, costs, budget)
            if oracle is None:
                try:
                    assign_tasks(pool_problem, TaskHistory())
                except InfeasibleAssignmentError:
                    continue
                raise AssertionError("greedy found a cover the oracle proves infeasible")
            feasible += 1
            result = assign_tasks(pool_problem, TaskHistory())
            covered = {c for cs in result.assigned.values() for c in cs}
            assert covered == cells
            assert cover_feasible(budget, tuple(result.assigned), costs)
            ratio = result.total_cost / oracle[0] if oracle[0] else 1.0
            worst_ratio = max(worst_ratio, ratio)
            assert ratio <= 1.4, f"greedy {result.total_cost} vs oracle {oracle[0]}"
        assert feasible >= 500, f"only {feasible} feasible instances drawn"

    _criterion("greedy allocation covers whenever the exhaustive oracle does, "
               "at <= 1.4x oracle cost, over 800 random instances", 60.0, check)


def _problem_from(cells, coverable, costs, budget) -> AssignmentProblem:
    from cleanloop.expertise import HumanProfile
    from cleanloop.model import CellSelector, Role
    from cleanloop.allocation import PoolMember

    pool = [
        PoolMember(profile=HumanProfile(id=hid, role=Role.DATA_CURATOR,
                                        data=CellSelector.parse(["*"]), cost=costs[hid]),
                   coverable=set(covered))
        for hid, covered in sorted(coverable.items())
    ]
    return AssignmentProblem(cells=sorted(cells, key=lambda c: c.key()),
                             pool=pool, task=TaskKind.REPAIR, budget=budget)


def test_cheap_strategy_leaves_overlap_to_automation():
    def check():
        session = payroll_session()
        add_job(session, payroll_job().to_doc())
        run_job(session, "job2", strategy="quantitative")
        tasks = list_open_tasks(session, "job2")
        assert len(tasks) == 1
        assert tasks[0].assignee == "Bob"
        assert [tc.cell.key() for tc in tasks[0].cells] == [SALARY_KEY]
        handle_response(session, tasks[0].id,
                        {"kind": "repair", "values": {SALARY_KEY: PAYROLL_TRUTH[SALARY_KEY]}})
        agents = set(session.registry)
        human_repairs = {e["cell"] for e in session.audit
                         if e.get("kind") == "repair" and e["producer"] not in agents}
        assert human_repairs == {SALARY_KEY}
        assert not human_repairs & set(OVERLAP_KEYS)

    _criterion("cheapest-first strategy: exactly one human repair task (salary only), "
               "no human repair event on the four overlap cells", 5.0, check)


def test_careful_strategy_puts_human_last_and_wins_on_accuracy(tmp_path):
    def check():
        session = payroll_session()
        add_job(session, payroll_job().to_doc())
        run_job(session, "job2", strategy="qualitative")
        [task] = list_open_tasks(session, "job2")
        values = {tc.cell.key(): PAYROLL_TRUTH[tc.cell.key()] for tc in task.cells}
        handle_response(session, task.id, {"kind": "repair", "values": values})
        for cell_key in OVERLAP_KEYS:
            assert session.repairs_by_cell[cell_key][-1].producer == "Bob"

        result = compare_strategies(
            substitution_config(rows=220, human_error=0.05, auto_error=0.30), tmp_path)
        assert result["quantitative"]["overlap_cells"] >= 200
        assert result["qualitative"]["overlap_cells"] >= 200
        assert (result["qualitative"]["overlap_accuracy"]
                > result["quantitative"]["overlap_accuracy"])

    _criterion("careful strategy: human is the final producer on every overlap cell; "
               "with human error 0.05 vs automatic 0.30 over 220 overlap cells the "
               "careful strategy is more accurate", 30.0, check)


def test_fd_detection_and_repair_match_the_all_pairs_oracle():
    def check():
        rng = random.Random(50150)
        for _ in range(500):
            instance, rule = random_fd_instance(rng, max_rows=50)
            report = detect_fd_violations(instance, rule)
            assert set(report.suspects) == all_pairs_fd_suspects(instance, rule)
            if not report.suspects:
                continue
            proposal = repair_fd_violations(instance, rule, report)
            assert {c: v for c, v in proposal.updates} == majority_repairs(instance, rule)
            for cell, value in proposal.updates:
                instance.set_value(cell.row_id, cell.attribute, value)
            assert detect_fd_violations(instance, rule).suspects == []

    _criterion("FD detection equals the exhaustive all-pairs oracle on 500 random "
               "instances (<= 50 rows); majority repair leaves zero suspects", 30.0, check)


def test_isolating_validation_pins_blame_on_the_unsound_rule():
    def check():
        session = branches5_session()
        add_job(session, branches5_job("job1", ("ph1",)).to_doc())
        run_job(session, "job1")
        answer_validation_tasks(session, "Jen", BRANCHES5_TRUTH)

        add_job(session, branches5_job("job2", ("ph1", "ph2")).to_doc())
        run_job(session, "job2",
                validation=ValidationStrategy(variant=ISOLATE_FACTORS, cell_budget=2))
        assert session.current_value(CellRef("Branches", "r1", "Zip")) == "47904"
        [task] = [t for t in session.tasks.values() if not t.closed]
        for tc in task.cells:
            assert set(session.ledger.accumulated_factors(tc.cell)) == {"ph2", "R1"}
        answer_validation_tasks(session, "Jen", BRANCHES5_TRUTH)
        rows = {r["factor"]: r for r in session.ledger.report_rows()}
        assert rows["ph2"]["quality"] < rows["ph1"]["quality"]
        assert rows["ph1"]["quality"] == 1.0
        assert rows["ph2"]["quality"] == 0.5

    _criterion("isolating validation picks only cells whose factors are the "
               "unsound rule plus the repairer, and ranks that rule below the "
               "sound one", 5.0, check)


def _mixed_verdict_session() -> Session:
    """Payroll run with a validator whose beliefs disagree on one cell."""
    session = payroll_session()
    add_job(session, payroll_job(validators=("Jen",)).to_doc())
    run_job(session, "job2", strategy="qualitative")
    [task] = list_open_tasks(session, "job2")
    values = {tc.cell.key(): PAYROLL_TRUTH[tc.cell.key()] for tc in task.cells}
    handle_response(session, task.id, {"kind": "repair", "values": values})
    skewed = dict(PAYROLL_TRUTH)
    skewed["Branches/r2/City"] = "Lafayett"
    answer_validation_tasks(session, "Jen", skewed)
    return session


def test_quality_counters_match_an_independent_audit_recount():
    def check():
        sessions = []
        two_rule = branches5_session()
        add_job(two_rule, branches5_job("job1", ("ph1",)).to_doc())
        run_job(two_rule, "job1")
        answer_validation_tasks(two_rule, "Jen", BRANCHES5_TRUTH)
        add_job(two_rule, branches5_job("job2", ("ph1", "ph2")).to_doc())
        run_job(two_rule, "job2",
                validation=ValidationStrategy(variant=ISOLATE_FACTORS, cell_budget=2))
        answer_validation_tasks(two_rule, "Jen", BRANCHES5_TRUTH)
        sessions.append(two_rule)
        sessions.append(_mixed_verdict_session())

        for session in sessions:
            recount = recount_factor_counts(session.audit)
            assert set(recount) == set(session.ledger.stats)
            for fid, stats in session.ledger.stats.items():
                assert 0 <= stats.correct <= stats.validated
                assert (stats.correct, stats.validated) == recount[fid]
            expertise = recount_expertise(session.audit, set(session.humans))
            for human in session.humans:
                for kind in (TaskKind.DETECT, TaskKind.REPAIR, TaskKind.VALIDATE):
                    assert (session.history.counts(human, None, kind)
                            == expertise.get((human, kind.value), (0, 0)))

    _criterion("factor counters satisfy 0 <= correct <= validated and match an "
               "independent recount of the audit log (expertise included)", 10.0, check)


def test_snapshot_and_replay_are_byte_identical():
    def check():
        fixtures = []

        quant = payroll_session()
        add_job(quant, payroll_job().to_doc())
        run_job(quant, "job2", strategy="quantitative")
        [task] = list_open_tasks(quant, "job2")
        handle_response(quant, task.id,
                        {"kind": "repair", "values": {SALARY_KEY: PAYROLL_TRUTH[SALARY_KEY]}})
        fixtures.append((quant, payroll_session))

        qual = payroll_session()
        add_job(qual, payroll_job().to_doc())
        run_job(qual, "job2", strategy="qualitative")
        [task] = list_open_tasks(qual, "job2")
        values = {tc.cell.key(): PAYROLL_TRUTH[tc.cell.key()] for tc in task.cells}
        handle_response(qual, task.id, {"kind": "repair", "values": values})
        fixtures.append((qual, payroll_session))

        fixtures.append((_mixed_verdict_session(), payroll_session))

        two_rule = branches5_session()
        add_job(two_rule, branches5_job("job1", ("ph1",)).to_doc())
        run_job(two_rule, "job1")
        answer_validation_tasks(two_rule, "Jen", BRANCHES5_TRUTH)
        add_job(two_rule, branches5_job("job2", ("ph1", "ph2")).to_doc())
        run_job(two_rule, "job2",
                validation=ValidationStrategy(variant=ISOLATE_FACTORS, cell_budget=2))
        answer_validation_tasks(two_rule, "Jen", BRANCHES5_TRUTH)
        fixtures.append((two_rule, branches5_session))

        for live, clone_factory in fixtures:
            replayed = clone_factory()
            replayed.replay(live.audit)
            for attr in ("relations_digest", "expertise_digest", "factor_digest", "state_digest"):
                assert getattr(replayed, attr)() == getattr(live, attr)()
            payload = live.snapshot()
            restored = Session.restore(payload)
            for attr in ("relations_digest", "expertise_digest", "factor_digest", "state_digest"):
                assert getattr(restored, attr)() == getattr(live, attr)()
            assert restored.snapshot() == payload

    _criterion("snapshot restore and audit replay reproduce relations, expertise, "
               "and the factor table byte-for-byte on every fixture", 10.0, check)

"""End-to-end simulations: error injection, scripted task driving, and scoring."""

from __future__ import annotations

import json

import pytest

from cleanloop.errors import ConfigError
from cleanloop.model import CellRef, RelationInstance
from cleanloop.simulate import (
    DIRTY_MARK,
    ErrorInjectionSpec,
    InjectionTarget,
    KIND_FD_SWAP,
    KIND_SUBSTITUTION,
    compare_strategies,
    inject_errors,
    materialize_session,
    run_simulation,
)

from oracles import all_pairs_fd_suspects
from scenarios import OVERLAP_KEYS, PAYROLL_TRUTH, payroll_config, substitution_config


def _clean_relation(rows: int = 10) -> RelationInstance:
    return RelationInstance("T", ["ID", "Val"],
                            [[f"i{n}", f"v{n}"] for n in range(1, rows + 1)])


class TestInjectionSpec:
    def test_kind_aliases(self):
        spec = ErrorInjectionSpec.from_doc({
            "relation": "T",
            "targets": [
                {"attribute": "Val", "kind": "substitution", "rate": 0.2},
                {"attribute": "City", "kind": "fd-swap", "rate": 0.1, "lhs": ["Zip"]},
            ],
            "seed": 5,
        })
        assert spec.targets[0].kind == KIND_SUBSTITUTION
        assert spec.targets[1].kind == KIND_FD_SWAP
        assert spec.seed == 5

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown error kind"):
            InjectionTarget(attribute="Val", kind="typo-storm", rate=0.1)

    def test_rate_bounds(self):
        with pytest.raises(ConfigError, match="error rate"):
            InjectionTarget(attribute="Val", kind=KIND_SUBSTITUTION, rate=1.5)

    def test_fd_swap_needs_lhs(self):
        with pytest.raises(ConfigError, match="lhs"):
            InjectionTarget(attribute="City", kind=KIND_FD_SWAP, rate=0.1)


class TestInjectErrors:
    def test_substitution_marks_expected_count(self):
        spec = ErrorInjectionSpec("T", (InjectionTarget("Val", KIND_SUBSTITUTION, 0.5),), seed=3)
        dirty, truth = inject_errors(_clean_relation(10), spec)
        assert len(truth) == 5
        for cell, old in truth.items():
            assert dirty.value(cell.row_id, cell.attribute) == old + DIRTY_MARK

    def test_zero_rate_changes_nothing(self):
        clean = _clean_relation()
        spec = ErrorInjectionSpec("T", (InjectionTarget("Val", KIND_SUBSTITUTION, 0.0),), seed=3)
        dirty, truth = inject_errors(clean, spec)
        assert truth == {}
        assert dirty.rows == clean.rows

    def test_deterministic_per_seed(self):
        spec = ErrorInjectionSpec("T", (InjectionTarget("Val", KIND_SUBSTITUTION, 0.4),), seed=8)
        first = inject_errors(_clean_relation(), spec)
        second = inject_errors(_clean_relation(), spec)
        assert first[0].rows == second[0].rows
        assert first[1] == second[1]
        other = ErrorInjectionSpec("T", (InjectionTarget("Val", KIND_SUBSTITUTION, 0.4),), seed=9)
        assert inject_errors(_clean_relation(), other)[1] != first[1]

    def test_original_stays_untouched(self):
        clean = _clean_relation()
        before = [list(r) for r in clean.rows]
        spec = ErrorInjectionSpec("T", (InjectionTarget("Val", KIND_SUBSTITUTION, 1.0),), seed=1)
        inject_errors(clean, spec)
        assert clean.rows == before

    def test_relation_name_must_match(self):
        spec = ErrorInjectionSpec("Other", (InjectionTarget("Val", KIND_SUBSTITUTION, 0.1),))
        with pytest.raises(ConfigError, match="targets relation"):
            inject_errors(_clean_relation(), spec)

    def test_unknown_attribute(self):
        spec = ErrorInjectionSpec("T", (InjectionTarget("Nope", KIND_SUBSTITUTION, 0.1),))
        with pytest.raises(ConfigError, match="unknown target attribute"):
            inject_errors(_clean_relation(), spec)

    def test_fd_swap_creates_violations(self):
        from cleanloop.agents import FDRule

        clean = RelationInstance("Branches", ["BID", "Zip", "City"], [
            ["B1", "47906", "West Lafayette"],
            ["B2", "46032", "Carmel"],
            ["B3", "46205", "Indianapolis"],
            ["B4", "46050", "Kirklin"],
        ])
        rule = FDRule("ph1", "Branches", ("Zip",), ("City",))
        assert all_pairs_fd_suspects(clean, rule) == set()
        spec = ErrorInjectionSpec("Branches", (
            InjectionTarget("City", KIND_FD_SWAP, 0.5, lhs=("Zip",)),), seed=2)
        dirty, truth = inject_errors(clean, spec)
        assert truth
        assert all_pairs_fd_suspects(dirty, rule)
        for cell, old in truth.items():
            assert cell.attribute == "Zip"
            assert clean.value(cell.row_id, "Zip") == old
            assert dirty.value(cell.row_id, "Zip") != old

    def test_fd_swap_without_donor_is_a_noop(self):
        clean = RelationInstance("Branches", ["BID", "Zip", "City"], [
            ["B1", "47906", "Lafayette"],
            ["B2", "47907", "Lafayette"],
        ])
        spec = ErrorInjectionSpec("Branches", (
            InjectionTarget("City", KIND_FD_SWAP, 1.0, lhs=("Zip",)),), seed=2)
        dirty, truth = inject_errors(clean, spec)
        assert truth == {}
        assert dirty.rows == clean.rows


class TestMaterializeSession:
    def test_truth_override_counts_only_differing_cells(self, tmp_path):
        config = payroll_config("quantitative")
        root, clean_values, injected = materialize_session(config, tmp_path / "s")
        assert {c.key() for c in injected} == {"Branches/r3/City", "Employees/r2/Sal"}
        assert injected[CellRef.parse("Branches/r3/City")] == "Lafayette"
        sal = CellRef.parse("Employees/r2/Sal")
        assert clean_values["Employees"][sal] == "120000"
        assert (root / "data" / "Branches.csv").exists()
        assert (root / "rules" / "rules.txt").read_text().startswith("ph1:")

    def test_scripts_and_agents_get_ground_truth_filled(self, tmp_path):
        config = substitution_config(rows=6)
        root, clean_values, injected = materialize_session(config, tmp_path / "s")
        scripts = json.loads((root / "humans" / "scripts.json").read_text())
        truth = scripts["scripts"]["Bob"]["ground_truth"]
        assert truth["Vals/r3/Val"] == "v3"
        agents = json.loads((root / "agents.json").read_text())
        assert agents["agents"][0]["script"]["ground_truth"] == truth
        assert len(injected) == 6

    def test_injection_applies_to_written_csv(self, tmp_path):
        config = substitution_config(rows=6)
        root, _, injected = materialize_session(config, tmp_path / "s")
        text = (root / "data" / "Vals.csv").read_text()
        assert DIRTY_MARK in text
        assert len(injected) == 6


class TestRunSimulation:
    def test_payroll_quantitative(self, tmp_path):
        report = run_simulation(payroll_config("quantitative"), tmp_path / "run")
        assert report.jobs == {"job2": "done"}
        assert report.human_tasks == {"Bob": 1}
        assert report.overlap_cells == 4
        assert report.overlap_accuracy == 0.5
        assert report.recall == 0.5
        assert report.total_human_cost == 2.0

    def test_payroll_qualitative(self, tmp_path):
        report = run_simulation(payroll_config("qualitative"), tmp_path / "run")
        assert report.human_tasks == {"Bob": 1}
        assert report.overlap_cells == 4
        assert report.overlap_accuracy == 1.0
        assert report.recall == 1.0
        assert report.precision == 1.0

    def test_reports_are_deterministic(self, tmp_path):
        config = payroll_config("qualitative")
        first = run_simulation(config, tmp_path / "a").to_doc()
        second = run_simulation(config, tmp_path / "b").to_doc()
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)

    def test_render_mentions_the_key_metrics(self, tmp_path):
        report = run_simulation(payroll_config("quantitative"), tmp_path / "run")
        text = report.render()
        assert "precision" in text
        assert "overlap accuracy" in text
        assert "factor" in text


class TestCompareStrategies:
    def test_payroll_gap(self, tmp_path):
        result = compare_strategies(payroll_config("quantitative"), tmp_path)
        assert result["v"] == 1
        assert result["quantitative"]["overlap_accuracy"] == 0.5
        assert result["qualitative"]["overlap_accuracy"] == 1.0
        assert result["deltas"]["overlap_accuracy"] == 0.5
        assert result["deltas"]["total_human_cost"] == 0.0
        assert result["deltas"]["human_tasks"] == 0

    def test_reliable_human_beats_sloppy_automation_on_overlap(self, tmp_path):
        config = substitution_config(rows=220, human_error=0.05, auto_error=0.30)
        result = compare_strategies(config, tmp_path)
        quant, qual = result["quantitative"], result["qualitative"]
        assert quant["overlap_cells"] >= 200
        assert qual["overlap_cells"] >= 200
        # nobody but the automatic fixer touches the column under the cheap strategy
        assert quant["human_tasks"] == {}
        assert qual["human_tasks"] == {"Bob": 1}
        assert qual["overlap_accuracy"] > quant["overlap_accuracy"]
        assert qual["overlap_accuracy"] >= 0.90
        assert quant["overlap_accuracy"] <= 0.80
        assert result["deltas"]["total_human_cost"] == 1.0

    def test_sloppy_human_does_not_beat_reliable_automation(self, tmp_path):
        config = substitution_config(rows=220, human_error=0.5, auto_error=0.0)
        result = compare_strategies(config, tmp_path)
        assert (result["quantitative"]["overlap_accuracy"]
                >= result["qualitative"]["overlap_accuracy"])
        assert result["quantitative"]["overlap_accuracy"] == 1.0

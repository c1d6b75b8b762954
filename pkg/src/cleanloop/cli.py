"""Command-line interface over sessions, jobs, reports, and simulations."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import gateway
from .errors import CleanloopError, ConfigError
from .model import TaskKind
from .provenance import ValidationStrategy, render_factor_table
from .simulate import compare_strategies, run_simulation
from .store import SESSION_ENV_VAR, Session

_SESSION_OPT = click.option(
    "--session", "session_dir", envvar=SESSION_ENV_VAR, required=True,
    type=click.Path(file_okay=False),
    help=f"Session directory (or set {SESSION_ENV_VAR}).")


def _fail(exc: CleanloopError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


def _open(session_dir: str) -> Session:
    return Session.open_directory(session_dir)


@click.group()
def main() -> None:
    """Human-in-the-loop data cleaning sessions."""


@main.group()
def session() -> None:
    """Create or inspect session directories."""


@session.command("init")
@click.argument("path", type=click.Path(file_okay=False))
def session_init(path: str) -> None:
    """Create the session directory skeleton."""
    root = Session.init_directory(path)
    click.echo(f"initialized session at {root}")


@session.command("load")
@click.argument("path", type=click.Path(exists=True, file_okay=False))
def session_load(path: str) -> None:
    """Load a session (replaying its audit log) and print a summary."""
    try:
        s = _open(path)
    except CleanloopError as exc:
        _fail(exc)
    try:
        click.echo(f"relations  {len(s.relations)}")
        click.echo(f"rules      {len(s.rules)}")
        click.echo(f"humans     {len(s.humans)}")
        click.echo(f"agents     {len(s.registry)}")
        click.echo(f"jobs       {len(s.jobs)}")
        click.echo(f"tasks      {len(s.tasks)} ({sum(1 for t in s.tasks.values() if not t.closed)} open)")
        click.echo(f"audit      {s.seq} events")
    finally:
        s.close()


@main.group()
def job() -> None:
    """Add and run cleaning jobs."""


@job.command("add")
@_SESSION_OPT
@click.argument("job_file", type=click.Path(exists=True, dir_okay=False))
def job_add(session_dir: str, job_file: str) -> None:
    """Register the JSON job document in JOB_FILE."""
    try:
        doc = json.loads(Path(job_file).read_text())
    except json.JSONDecodeError as exc:
        _fail(ConfigError(f"job file is not valid JSON: {exc}"))
    s = _open(session_dir)
    try:
        ack = gateway.add_job(s, doc)
        click.echo(f"added job {ack['job']} class={ack['class']} seq={ack['seq']}")
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@job.command("run")
@_SESSION_OPT
@click.argument("job_id")
@click.option("--strategy", "strategies", multiple=True,
              help="Cost strategy (quantitative|qualitative) and/or validation "
                   "strategy (AggregateCoverage|IsolateFactors).")
@click.option("--budget", default=None,
              help="Validation cell budget (an integer) or an allocation budget "
                   "override like max-humans=2 / max-total-cost=5.")
@click.option("--json", "as_json", is_flag=True, help="Print the machine-readable result.")
def job_run(session_dir: str, job_id: str, strategies: tuple[str, ...],
            budget: str | None, as_json: bool) -> None:
    """Run a job; automatic steps apply immediately, human steps open tasks."""
    s = _open(session_dir)
    try:
        options: dict = {}
        if strategies:
            options["strategy"] = list(strategies)
        if budget is not None:
            options["budget"] = budget
        result = gateway.start_job(s, job_id, options)
        if as_json:
            click.echo(json.dumps(result, indent=2))
            return
        click.echo(f"job {job_id} status={result['status']} strategy={result['strategy']} seq={result['seq']}")
        if result["overlap"]:
            click.echo("overlap: " + ", ".join(result["overlap"]))
        for step in result["steps"]:
            click.echo(f"  step {step['agent']} ({step['nature']}) "
                       f"{len(step['cells'])} cells -> {step['status']}")
        if result["open_tasks"]:
            click.echo("open tasks: " + ", ".join(result["open_tasks"]))
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@main.group()
def report() -> None:
    """Quality and expertise reports."""


@report.command("factors")
@_SESSION_OPT
@click.option("--json", "as_json", is_flag=True)
def report_factors(session_dir: str, as_json: bool) -> None:
    """Factor quality ranking (best first; untested factors lead unranked)."""
    s = _open(session_dir)
    try:
        doc = gateway.factor_report(s)
        if as_json:
            click.echo(json.dumps(doc, indent=2))
        else:
            click.echo(render_factor_table(doc["factors"]))
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@report.command("expertise")
@_SESSION_OPT
@click.argument("human_id")
@click.option("--task", default=None, help="Restrict to one task kind (detect|repair|validate).")
@click.option("--json", "as_json", is_flag=True)
def report_expertise(session_dir: str, human_id: str, task: str | None, as_json: bool) -> None:
    """Expertise counters and scores for one human."""
    s = _open(session_dir)
    try:
        doc = gateway.expertise_report(s, human_id, task)
        if as_json:
            click.echo(json.dumps(doc, indent=2))
            return
        click.echo(f"{doc['human']} role={doc['role']} cost={doc['cost']:g}")
        for kind, row in doc["scores"].items():
            exact = "undefined" if row["expertise"] is None else f"{row['expertise']:.4f}"
            click.echo(f"  {kind:<9} {row['correct']}/{row['validated']} "
                       f"expertise={exact} smoothed={row['smoothed']:.4f}")
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@report.command("targets")
@_SESSION_OPT
@click.option("--strategy", required=True,
              help="AggregateCoverage or IsolateFactors.")
@click.option("--budget", required=True, type=int, help="Cell budget.")
@click.option("--suspect", "suspects", multiple=True, help="Suspect factor id (repeatable).")
@click.option("--json", "as_json", is_flag=True)
def report_targets(session_dir: str, strategy: str, budget: int,
                   suspects: tuple[str, ...], as_json: bool) -> None:
    """Preview which ledgered cells a validation strategy would pick."""
    from .orchestrator import parse_validation_variant

    s = _open(session_dir)
    try:
        spec = ValidationStrategy(variant=parse_validation_variant(strategy), cell_budget=budget)
        cells = s.ledger.select_validation_targets(spec, suspects=set(suspects) or None)
        if as_json:
            click.echo(json.dumps({"v": 1, "targets": [c.key() for c in cells]}))
        else:
            for cell in cells:
                click.echo(cell.key())
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@main.group()
def tasks() -> None:
    """Inspect and answer pending human tasks."""


@tasks.command("list")
@_SESSION_OPT
@click.argument("human_id")
@click.option("--json", "as_json", is_flag=True)
def tasks_list(session_dir: str, human_id: str, as_json: bool) -> None:
    """Open tasks for one human, oldest first."""
    s = _open(session_dir)
    try:
        pending = gateway.list_pending_tasks(s, human_id)
        if as_json:
            click.echo(json.dumps({"v": 1, "human": human_id,
                                   "tasks": [t.to_doc() for t in pending]}, indent=2))
            return
        if not pending:
            click.echo("no open tasks")
            return
        for t in pending:
            click.echo(f"{t.id} {t.kind.value.lower()} job={t.job} cells={len(t.cells)}")
            for tc in t.cells:
                extra = ""
                if t.kind == TaskKind.VALIDATE and tc.old is not None:
                    extra = f" (was {tc.old!r}, now {tc.new!r})"
                click.echo(f"    {tc.cell.key()} = {tc.value!r}{extra}")
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@tasks.command("respond")
@_SESSION_OPT
@click.argument("task_id")
@click.option("--file", "response_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON response document (kind report|repair|verdict).")
def tasks_respond(session_dir: str, task_id: str, response_file: str) -> None:
    """Submit the response document for one task."""
    try:
        doc = json.loads(Path(response_file).read_text())
    except json.JSONDecodeError as exc:
        _fail(ConfigError(f"response file is not valid JSON: {exc}"))
    s = _open(session_dir)
    try:
        ack = gateway.submit_response(s, task_id, doc)
        click.echo(f"task {ack['task']} closed; job {ack['job']} status={ack['job_status']} seq={ack['seq']}")
    except CleanloopError as exc:
        _fail(exc)
    finally:
        s.close()


@main.command("simulate")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--workdir", default=None, type=click.Path(file_okay=False),
              help="Where to materialize the session (default: a temp directory).")
@click.option("--compare", "compare", is_flag=True,
              help="Run both cost strategies on identical dirty data.")
@click.option("--json", "as_json", is_flag=True)
def simulate_cmd(config_file: str, workdir: str | None, compare: bool, as_json: bool) -> None:
    """Run the simulation described by CONFIG_FILE."""
    import tempfile

    try:
        config = json.loads(Path(config_file).read_text())
    except json.JSONDecodeError as exc:
        _fail(ConfigError(f"config file is not valid JSON: {exc}"))
    try:
        if workdir is None:
            with tempfile.TemporaryDirectory(prefix="cleanloop-sim-") as tmp:
                _run_sim(config, Path(tmp), compare, as_json)
        else:
            _run_sim(config, Path(workdir), compare, as_json)
    except CleanloopError as exc:
        _fail(exc)


def _run_sim(config: dict, workdir: Path, compare: bool, as_json: bool) -> None:
    if compare:
        result = compare_strategies(config, workdir)
        if as_json:
            click.echo(json.dumps(result, indent=2))
            return
        for name in ("quantitative", "qualitative"):
            doc = result[name]
            click.echo(f"[{name}] precision={_fmt(doc['precision'])} "
                       f"recall={_fmt(doc['recall'])} "
                       f"overlap_accuracy={_fmt(doc['overlap_accuracy'])} "
                       f"cost={doc['total_human_cost']:g}")
        deltas = result["deltas"]
        click.echo(f"deltas: overlap_accuracy={_fmt(deltas['overlap_accuracy'])} "
                   f"cost={deltas['total_human_cost']:g} tasks={deltas['human_tasks']}")
        return
    report = run_simulation(config, workdir / "run")
    if as_json:
        click.echo(json.dumps(report.to_doc(), indent=2))
    else:
        click.echo(report.render())


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.4f}"


@main.command("serve")
@_SESSION_OPT
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8400, show_default=True, type=int)
def serve(session_dir: str, host: str, port: int) -> None:
    """Serve the wire API for one session."""
    import uvicorn

    from .gateway import create_app

    s = _open(session_dir)
    app = create_app(s)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

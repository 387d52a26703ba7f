"""Command-line entry points: serve, session management, simulation."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import partition as prt
from . import simulator as sim
from .errors import CrmError
from .schema import parse_design_document
from .service import SessionStore, canonical_json, create_app


@click.group()
def main():
    """Dose-finding engine: live sessions, simulation, design tables."""


@main.command()
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--data",
    "data_dir",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Directory holding the per-session event logs.",
)
@click.option(
    "--ui",
    "ui_dir",
    default=None,
    type=click.Path(file_okay=False, exists=True, path_type=Path),
    help="Optional static UI bundle to mount at /ui.",
)
def serve(port: int, host: str, data_dir: Path, ui_dir: Path | None):
    """Run the HTTP trial service."""
    import uvicorn

    app = create_app(data_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.group()
def session():
    """Create and drive live-trial sessions against a data directory."""


def _store(data_dir: Path) -> SessionStore:
    return SessionStore(data_dir)


def _echo_json(payload: dict) -> None:
    click.echo(canonical_json(payload))


@session.command("new")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--id", "session_id", default=None, help="Explicit session id (default: random).")
def session_new(config_path: Path, data_dir: Path, session_id: str | None):
    """Create a session from a design-configuration document."""
    doc = json.loads(config_path.read_text(encoding="utf-8"))
    store = _store(data_dir)
    try:
        state = store.create(doc, session_id=session_id)
    except CrmError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(store.session_payload(state))


@session.command("show")
@click.argument("session_id")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def session_show(session_id: str, data_dir: Path):
    """Print the full session view."""
    store = _store(data_dir)
    try:
        state = store.get(session_id)
    except CrmError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(store.session_payload(state))


def _outcome_options(fn):
    fn = click.option("--dose", "dose_index", required=True, type=int)(fn)
    fn = click.option("--tox", "toxicity", required=True, type=click.IntRange(0, 1))(fn)
    fn = click.option("--grade", default=None, type=click.IntRange(0, 4))(fn)
    fn = click.option("--group", default=None, type=click.IntRange(0, 1))(fn)
    fn = click.option("--response", default=None, type=click.IntRange(0, 1))(fn)
    return fn


def _outcome_payload(dose_index, toxicity, grade, group, response) -> dict:
    payload = {"dose_index": dose_index, "toxicity": toxicity}
    if grade is not None:
        payload["grade"] = grade
    if group is not None:
        payload["group"] = group
    if response is not None:
        payload["response"] = response
    return payload


@session.command("outcome")
@click.argument("session_id")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@_outcome_options
@click.option("--override", is_flag=True, help="Record at a non-recommended dose.")
def session_outcome(session_id, data_dir, dose_index, toxicity, grade, group, response, override):
    """Record one patient outcome and print the new recommendation."""
    store = _store(data_dir)
    payload = _outcome_payload(dose_index, toxicity, grade, group, response)
    try:
        state = store.record_outcome(session_id, payload, override=override)
    except CrmError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(
        {
            "recommendation": store.recommendation_payload(state),
            "estimates": store.estimates_payload(state),
        }
    )


@session.command("what-if")
@click.argument("session_id")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@_outcome_options
@click.option("--override", is_flag=True)
def session_what_if(session_id, data_dir, dose_index, toxicity, grade, group, response, override):
    """Preview the recommendation a hypothetical outcome would produce."""
    store = _store(data_dir)
    payload = _outcome_payload(dose_index, toxicity, grade, group, response)
    if override:
        payload["override"] = True
    try:
        result = store.what_if(session_id, [payload])
    except CrmError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(result)


@main.command()
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--replicates", required=True, type=click.IntRange(min=1))
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def simulate(design_path, scenario_path, replicates, seed, out_dir):
    """Replicate a design against a scenario and write the report."""
    design_doc = json.loads(design_path.read_text(encoding="utf-8"))
    scenario_doc = json.loads(scenario_path.read_text(encoding="utf-8"))
    try:
        config = parse_design_document(design_doc)
        scenario = sim.scenario_from_dict(scenario_doc)
        oc = sim.operating_characteristics(
            config.policy, config.model, scenario, replicates, seed
        )
    except (CrmError, ValueError, KeyError) as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "oc.json").write_text(sim.oc_to_json(oc), encoding="utf-8")
    (out_dir / "oc.csv").write_text(sim.oc_to_csv(oc), encoding="utf-8")
    best = max(range(len(oc.recommendation_dist)), key=lambda i: oc.recommendation_dist[i])
    click.echo(
        f"{replicates} replicates of n={oc.n}: modal recommendation dose {best + 1} "
        f"({oc.recommendation_dist[best]:.3f}), toxicity rate {oc.toxicity_rate:.3f}"
    )
    click.echo(f"report written to {out_dir}/oc.json and {out_dir}/oc.csv")


@main.command("partition")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["json", "tsv"]), default="json", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False, path_type=Path))
def partition_table(design_path, fmt, out_path):
    """Emit the parameter-partition table for a design."""
    design_doc = json.loads(design_path.read_text(encoding="utf-8"))
    try:
        config = parse_design_document(design_doc)
        part = prt.compute_partition(
            config.model, config.policy.target, config.model.param_bounds
        )
    except (CrmError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    text = part.to_json() if fmt == "json" else part.to_tsv()
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"written to {out_path}")
    else:
        click.echo(text)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

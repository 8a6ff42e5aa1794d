"""Command-line entry point (``twinsim``).

Exit status: 0 on success, 1 on domain errors, 2 on usage errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .definitions import (
    DefinitionError,
    DTDLError,
    GraphError,
    dump_documents,
    import_dtdl,
    load_files,
    resolve_graph,
    split_resources,
)
from .metrics import ReportError, compare as compare_runs, export_history, report as build_report, write_run
from .routing import RoutingError, derive_topology
from .scenario import PRESETS, ConfigError, ScenarioConfig, city_graph, load_config
from .store import StoreError

DOMAIN_ERRORS = (DefinitionError, DTDLError, GraphError, ConfigError, ReportError, RoutingError, StoreError, OSError)


class _Fail(click.ClickException):
    exit_code = 1


def _graph_from(files):
    interfaces, instances = split_resources(load_files(files))
    return resolve_graph(interfaces, instances)


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DOMAIN_ERRORS as exc:
            raise _Fail(str(exc)) from None

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="twinsim")
def main() -> None:
    """Twin definitions, broker topology planning and event-driven simulation."""


@main.command()
@click.argument("files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@_guard
def validate(files) -> None:
    """Parse and resolve resource FILES, reporting the resource count."""
    resources = load_files(files)
    interfaces, instances = split_resources(resources)
    resolve_graph(interfaces, instances)
    click.echo(f"{len(resources)} resources ({len(interfaces)} interfaces, {len(instances)} instances)")


@main.command("import-dtdl")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", type=click.Path(dir_okay=False), help="Write YAML resources here instead of stdout.")
@click.option("--permissive", is_flag=True, help="Skip unsupported DTDL content instead of failing.")
@_guard
def import_dtdl_cmd(files, out, permissive) -> None:
    """Convert DTDL v2 JSON interface FILES into interface resources."""
    docs = []
    for path in files:
        try:
            docs.append(json.loads(Path(path).read_text(encoding="utf-8")))
        except ValueError as exc:
            raise _Fail(f"{path}: {exc}") from None
    warnings: list[str] = []
    interfaces = import_dtdl(docs, permissive=permissive, warnings=warnings)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    text = dump_documents(interfaces)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {len(interfaces)} interfaces to {out}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--neighborhoods", "-n", type=click.IntRange(min=1), help="Plan the built-in city instead of FILES.")
@click.option("--json", "as_json", is_flag=True, help="Print the full plan as JSON.")
@_guard
def plan(files, neighborhoods, as_json) -> None:
    """Derive the broker topology for resource FILES."""
    if files and neighborhoods:
        raise click.UsageError("give FILES or --neighborhoods, not both")
    graph = city_graph(neighborhoods) if neighborhoods else _graph_from(files)
    topo = derive_topology(graph)
    if as_json:
        click.echo(json.dumps(topo.to_json(), indent=1))
    else:
        click.echo(topo.summary())


@main.command()
@click.option("--scenario", type=click.Path(exists=True, dir_okay=False), help="Scenario YAML file.")
@click.option("--seed", type=int, help="Override the scenario seed.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory to create.")
@click.option("--neighborhoods", "-n", type=click.IntRange(min=1), help="Override the neighborhood count.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Provisioning preset.")
@click.option("--definitions", "definitions", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Resource files to simulate instead of the built-in city (repeatable).")
@click.option("--no-store", is_flag=True, help="Keep the event store in memory only.")
@_guard
def simulate(scenario, seed, out, neighborhoods, preset, definitions, no_store) -> None:
    """Run a scenario and write its run directory."""
    from .engine import Simulation

    config = load_config(scenario) if scenario else ScenarioConfig()
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if neighborhoods is not None:
        changes["neighborhoods"] = neighborhoods
    if preset is not None:
        changes.update(PRESETS[preset])
    if changes:
        config = config.replace(**changes)
    graph = _graph_from(definitions) if definitions else None
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulation(config, graph, None if no_store else out_dir / "store")
    try:
        result = sim.run()
    finally:
        sim.store.close()
    write_run(result, out_dir, sim.plan, sim.broker)
    m = result.broker
    click.echo(
        f"seed={result.seed} end={result.end_time:g}s published={m.published} "
        f"delivered={m.delivered} appended={result.store_stats['appended']} hash={result.summary_hash[:16]}"
    )


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "fmt", flag_value="csv", help="Print latency percentiles as CSV.")
@click.option("--json", "fmt", flag_value="json", help="Print the summary as JSON.")
@click.option("--history", nargs=2, metavar="INTERFACE INSTANCE", help="Export one twin's stored history.")
@click.option("--history-out", type=click.Path(dir_okay=False), help="Destination for --history (default: stdout).")
@_guard
def report(run_dir, fmt, history, history_out) -> None:
    """Derive report files from RUN_DIR."""
    if history:
        iface, inst = history
        n = export_history(run_dir, iface, inst, history_out or sys.stdout)
        if history_out:
            click.echo(f"wrote {n} events to {history_out}")
        return
    doc = build_report(run_dir)
    if fmt == "json":
        click.echo(json.dumps(doc, indent=1, sort_keys=True))
    elif fmt == "csv":
        click.echo((Path(run_dir) / "report" / "latency_percentiles.csv").read_text(), nl=False)
    else:
        eps = doc["events_per_sec"]
        click.echo(f"events/sec median={eps['median']:g} mean={eps['mean']:.1f} max={eps['max']:g}")
        click.echo(f"pods median={doc['pods']['median']:g} max={doc['pods']['max']:g}")
        for name, p in doc["latency"].items():
            click.echo(f"{name}: p50={p['p50']:.4f} p99={p['p99']:.4f} n={p['count']}")


@main.command()
@click.argument("run_a", type=click.Path(exists=True, file_okay=False))
@click.argument("run_b", type=click.Path(exists=True, file_okay=False))
@_guard
def compare(run_a, run_b) -> None:
    """Resource savings of RUN_A relative to RUN_B."""
    s = compare_runs(run_a, run_b)
    click.echo(f"cpu_savings={s['cpu']:.2f}% memory_savings={s['memory']:.2f}%")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

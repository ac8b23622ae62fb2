"""
Command line interface for pymcgs
"""
import json
import os
import signal
import sys

import click

from . import __version__
from .core.config import ENGINES, MODES, RunConfig
from .core.graph import SolutionGraph, validate_structure
from .core.orchestrator import Orchestrator
from .core.report import emit_report


def handle_interrupt(signum, frame):
    """Handle interrupt signal"""
    sys.exit(130)


@click.group(context_settings=dict(help_option_names=['-h', '--help']))
@click.version_option(version=__version__, prog_name="pymcgs")
def main():
    """pymcgs - Monte Carlo Graph Search over candidate solutions.

\b
Commands:
    run        Search a task and write events.jsonl, graph.json and reports
    report     Rebuild report.csv and summary.json from a run directory
    validate   Check a graph.json snapshot for structural violations

\b
Example config file (every key is optional):
    max_steps: 500               # search steps
    max_parallel_workers: 3
    engine: synthetic            # synthetic | llm
    mode: graph                  # graph | tree (plain MCTS)
    task_file: task.json"""


@main.command()
@click.option('--config', '-c', 'config_file', type=click.Path(exists=True, dir_okay=False),
              help='Run config file (key: value lines)')
@click.option('--seed', type=int, help='Run seed')
@click.option('--steps', type=int, help='Override max_steps')
@click.option('--workers', type=int, help='Override max_parallel_workers')
@click.option('--engine', type=click.Choice(ENGINES), help='Proposal engine')
@click.option('--mode', type=click.Choice(MODES), help='graph search or plain tree search')
@click.option('--out', '-o', type=click.Path(file_okay=False), help='Output directory')
@click.option('--quiet', '-q', is_flag=True, help='Suppress progress output')
@click.option('--debug', is_flag=True, help='Show config structure and every step')
def run(config_file, seed, steps, workers, engine, mode, out, quiet, debug):
    """Run a search"""
    signal.signal(signal.SIGTERM, handle_interrupt)
    try:
        config = RunConfig.from_file(config_file)
        config.override(seed=seed, max_steps=steps, max_parallel_workers=workers,
                        engine=engine, mode=mode, output_dir=out)
        report = Orchestrator(config, run_dir=config.output_dir, quiet=quiet, debug=debug).run()
    except (ValueError, FileNotFoundError, PermissionError, RuntimeError) as e:
        raise click.ClickException(str(e))

    if not quiet:
        click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        click.echo(f"Outputs written to {config.output_dir}")


@main.command()
@click.option('--run', 'run_dir', required=True, type=click.Path(file_okay=False),
              help='Run output directory')
def report(run_dir):
    """Rebuild the report files of a finished run"""
    try:
        paths = emit_report(run_dir)
        with open(paths["summary"], 'r') as f:
            summary = json.load(f)
    except (ValueError, FileNotFoundError, PermissionError) as e:
        raise click.ClickException(str(e))

    best = summary.get("best")
    if best is None:
        click.secho(f"{summary.get('status')}", fg="yellow")
    else:
        click.echo(f"Best {summary.get('metric_name')}: {best['metric']}")
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.option('--snapshot', required=True, type=click.Path(exists=True, dir_okay=False),
              help='graph.json snapshot')
@click.option('--max-references', type=int, help='Reference in-degree cap to check')
def validate(snapshot, max_references):
    """Check the structural invariants of a graph snapshot"""
    try:
        with open(snapshot, 'r') as f:
            graph = SolutionGraph.from_json(f.read())
    except (ValueError, KeyError) as e:
        raise click.ClickException(f"{snapshot}: cannot load graph: {e}")

    violations = validate_structure(graph, max_references)
    if violations.is_valid:
        click.secho(f"{os.path.basename(snapshot)}: {len(graph)} nodes, no violations", fg="green")
        return
    click.echo(str(violations))
    raise click.ClickException(f"{len(violations)} structural violations")


if __name__ == '__main__':
    main()

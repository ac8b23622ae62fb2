#!/usr/bin/env python3
"""
Ablation runner for pymcgs.
Runs no-KB tree search, KB tree search, KB intra-branch search and the full
graph search over several seeds and prints the mean final best of each.

Usage:
    ./ablation.py [--config FILE] [--seeds N] [--steps N] [--sigma S]
"""
import dataclasses
import sys

import click

from pymcgs.core.ablation import ABLATIONS, run_ablation
from pymcgs.core.config import RunConfig
from pymcgs.core.engine import load_task


@click.command()
@click.option('-c', '--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
              help='Base run config')
@click.option('-n', '--seeds', type=int, default=20, help='Number of seeds (default: 20)')
@click.option('--steps', type=int, default=500, help='Steps per run (default: 500)')
@click.option('--sigma', type=float, help='Override the task evaluation noise')
@click.option('--workers', type=int, default=1, help='Workers per run (default: 1)')
def main(config_file, seeds, steps, sigma, workers):
    """Compare the search variants on one task"""
    try:
        base = RunConfig.from_file(config_file)
        base.override(max_parallel_workers=workers)
        task = load_task(base.task_file)
        if sigma is not None:
            task = dataclasses.replace(task, eval_noise_sigma=sigma)
        result = run_ablation(base, list(range(seeds)), steps=steps, task=task)
    except (ValueError, FileNotFoundError) as e:
        click.secho(f"Error: {e}", fg="red", err=True)
        sys.exit(1)

    click.echo(f"{task.task_id}: {task.metric_name} ({task.direction.value.lower()}), "
               f"{seeds} seeds x {steps} steps")
    for name in ABLATIONS:
        click.echo(f"  {name:<10} mean best {result.mean(name):.6f}")
    click.echo(f"  full beats tree in {result.win_rate(task):.0%} of seeds")


if __name__ == '__main__':
    main()
